"""Built-in test problems, their JSON form, and sampled estimation of assumption constants.

Every built-in problem is generated as a plain data document (centers,
weights, matrices, noise tables) and then instantiated from it, so a problem
written to JSON and read back is identical to the original.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Optional, Union

import numpy as np

from .errors import ConfigurationError, GenerationError, InputError
from .model import (
    AssumptionConstants,
    DetConstraints,
    LinearConstraints,
    Matrix,
    ObjectiveOracle,
    ProblemSpec,
    StochConstraints,
    Vector,
    _exact_constraints,
    delta_of,
    grad_f_all,
    normal_cone_distance,
    objective_value,
    set_from_dict,
)

__all__ = [
    "AnnulusRegion",
    "BoxRegion",
    "BUILTINS",
    "delta_of",
    "estimate_constants",
    "make_builtin",
    "make_sharing",
    "make_sphere",
    "make_stoch_sphere",
    "problem_from_dict",
    "problem_to_dict",
]

SAFETY_FACTOR = 1.25


# --------------------------------------------------------------------------
# Objective: weighted finite sum of quadratics plus a bounded nonconvex term


def _bump(x: Vector) -> Vector:
    return x * x / (1.0 + x * x)


def _bump_grad(x: Vector) -> Vector:
    q = 1.0 + x * x
    return 2.0 * x / (q * q)


def finite_sum_objective(
    centers: Matrix, weights: Vector, nonconvex: float, probs: Optional[Vector] = None
) -> tuple[ObjectiveOracle, Callable[[Vector], Vector]]:
    """Components ``w_i/2 |x - a_i|^2 + s * sum_j x_j^2/(1 + x_j^2)``.

    Returns the oracle and the closed-form mean gradient.
    """
    a = np.asarray(centers, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    n = a.shape[0]
    p = np.full(n, 1.0 / n) if probs is None else np.asarray(probs, dtype=np.float64)
    if w.size != n or p.size != n:
        raise InputError("centers, weights and probabilities disagree in length")
    s = float(nonconvex)
    pw = p * w
    mean_w = float(pw.sum())
    mean_wa = pw @ a

    def grad_sample(x: Vector, i: int) -> Vector:
        return w[i] * (x - a[i]) + s * _bump_grad(x)

    def value_sample(x: Vector, i: int) -> float:
        diff = x - a[i]
        return 0.5 * w[i] * float(diff @ diff) + s * float(np.sum(_bump(x)))

    def grad_table(x: Vector) -> Matrix:
        return w[:, None] * (x - a) + s * _bump_grad(x)

    def value_table(x: Vector) -> Vector:
        diff = x - a
        return 0.5 * w * np.einsum("ij,ij->i", diff, diff) + s * float(np.sum(_bump(x)))

    def grad_f(x: Vector) -> Vector:
        return mean_w * x - mean_wa + s * _bump_grad(x)

    oracle = ObjectiveOracle(p, grad_sample, value_sample, grad_table, value_table)
    return oracle, grad_f


# --------------------------------------------------------------------------
# Sphere constraints


def sphere_constraints(radius: float = 1.0) -> DetConstraints:
    r2 = float(radius) ** 2

    def fun(x: Vector) -> Vector:
        return np.array([float(x @ x) - r2])

    def jac(x: Vector) -> Matrix:
        return 2.0 * x[None, :]

    return DetConstraints(1, fun, jac)


def stoch_sphere_constraints(value_noise: Vector, jac_noise: Vector, radius: float = 1.0) -> StochConstraints:
    """``c~ = |x|^2 - r^2 + eps`` and ``grad c~ = 2x(1 + d)``.

    The sample space is the product of the two noise tables, uniformly weighted;
    outcome ``z`` pairs ``eps[z // len(d)]`` with ``d[z % len(d)]``.
    """
    eps = np.asarray(value_noise, dtype=np.float64).reshape(-1)
    dl = np.asarray(jac_noise, dtype=np.float64).reshape(-1)
    for name, table in (("value", eps), ("jacobian", dl)):
        if table.size < 2:
            raise InputError(f"{name} noise table needs at least two outcomes")
        if abs(table.mean()) > 1e-12 * max(1.0, float(np.abs(table).max())):
            raise InputError(f"{name} noise table is not zero-mean (mean {table.mean():.3e})")
    r2 = float(radius) ** 2
    nd = dl.size
    eps_of = np.repeat(eps, nd)
    scale_of = 1.0 + np.tile(dl, eps.size)
    probs = np.full(eps.size * nd, 1.0 / (eps.size * nd))

    def value_sample(x: Vector, z: int) -> Vector:
        return np.array([float(x @ x) - r2 + eps_of[z]])

    def jac_sample(x: Vector, z: int) -> Matrix:
        return (2.0 * scale_of[z]) * x[None, :]

    def exact_fun(x: Vector) -> Vector:
        return np.array([float(x @ x) - r2])

    def exact_jac(x: Vector) -> Matrix:
        return 2.0 * x[None, :]

    return StochConstraints(1, probs, value_sample, jac_sample, exact_fun, exact_jac)


# --------------------------------------------------------------------------
# JSON form


def _array(doc: dict, key: str) -> np.ndarray:
    if key not in doc:
        raise ConfigurationError(f"problem document lacks {key!r}")
    return np.asarray(doc[key], dtype=np.float64)


def problem_from_dict(doc: dict) -> ProblemSpec:
    """Instantiate a problem from its data document (see :func:`problem_to_dict`)."""
    if "builtin" in doc:
        return make_builtin(doc["builtin"], **doc.get("params", {}))
    dim = int(doc["dim"])
    obj_doc = doc["objective"]
    if obj_doc.get("kind") != "finite_sum":
        raise ConfigurationError(f"unsupported objective kind {obj_doc.get('kind')!r}")
    centers = _array(obj_doc, "centers").reshape(-1, dim)
    weights = np.asarray(obj_doc.get("weights", np.ones(centers.shape[0])), dtype=np.float64)
    probs = obj_doc.get("probs")
    objective, grad_f = finite_sum_objective(centers, weights, float(obj_doc.get("nonconvex", 0.0)), probs)

    con_doc = doc["constraints"]
    kind = con_doc.get("kind")
    if kind == "linear":
        constraints = LinearConstraints(_array(con_doc, "A").reshape(-1, dim), _array(con_doc, "b"))
    elif kind == "sphere":
        constraints = sphere_constraints(float(con_doc.get("radius", 1.0)))
    elif kind == "stoch_sphere":
        constraints = stoch_sphere_constraints(
            _array(con_doc, "value_noise"), _array(con_doc, "jac_noise"), float(con_doc.get("radius", 1.0))
        )
    else:
        raise ConfigurationError(f"unsupported constraint kind {kind!r}")

    feasible = set_from_dict(doc.get("set", {"kind": "full", "dim": dim}))
    constants = AssumptionConstants.from_dict(doc.get("constants", {}))
    x0 = doc.get("x0")
    return ProblemSpec(
        dim=dim,
        objective=objective,
        constraints=constraints,
        feasible_set=feasible,
        constants=constants,
        grad_f=grad_f,
        x0=None if x0 is None else np.asarray(x0, dtype=np.float64),
        name=str(doc.get("name", "custom")),
        source=doc,
    )


def problem_to_dict(problem: ProblemSpec) -> dict:
    """The data document a problem was built from, with its current constants."""
    if problem.source is None:
        raise ConfigurationError("only problems built from a data document can be serialized")
    doc = dict(problem.source)
    doc["constants"] = problem.constants.to_dict()
    return doc


def _with_constants(doc: dict, region: "Region", n_samples: int, seed: int) -> ProblemSpec:
    bare = problem_from_dict(doc)
    constants = estimate_constants(bare, region, n_samples=n_samples, seed=seed)
    doc = dict(doc, constants=constants.to_dict())
    return problem_from_dict(doc)


# --------------------------------------------------------------------------
# Built-in generators


def make_sharing(
    d: int = 20,
    m: int = 5,
    n: int = 50,
    seed: int = 0,
    nonconvex: float = 3.0,
    weight_spread: float = 0.0,
    box: float = 5.0,
    n_samples: int = 200,
) -> ProblemSpec:
    """Linearly constrained finite-sum problem ``min f(x)  s.t.  A x = b``.

    ``A`` has i.i.d. standard normal entries and full row rank; ``b = A x_feas``
    for a random ``x_feas``. Component weights are ``1`` when
    ``weight_spread`` is zero, else uniform in ``[1 - spread, 1 + spread]``.
    Constants are estimated on the box ``[-box, box]^d``.
    """
    if not 1 <= m <= d:
        raise InputError("need 1 <= m <= d")
    if not 0.0 <= weight_spread < 1.0:
        raise InputError("weight_spread must lie in [0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    for _ in range(10):
        A = rng.standard_normal((m, d))
        if np.linalg.matrix_rank(A) == m:
            break
    else:
        raise GenerationError("could not draw a full-row-rank constraint matrix in 10 attempts")
    x_feas = rng.standard_normal(d)
    b = A @ x_feas
    centers = rng.standard_normal((n, d))
    weights = 1.0 + weight_spread * rng.uniform(-1.0, 1.0, n)
    doc = {
        "name": "sharing",
        "dim": d,
        "objective": {
            "kind": "finite_sum",
            "centers": centers.tolist(),
            "weights": weights.tolist(),
            "nonconvex": nonconvex,
        },
        "constraints": {"kind": "linear", "A": A.tolist(), "b": b.tolist()},
        "set": {"kind": "full", "dim": d},
        "x_feas": x_feas.tolist(),
        "region": {"kind": "box", "lower": [-box] * d, "upper": [box] * d},
    }
    return _with_constants(doc, BoxRegion(np.full(d, -box), np.full(d, box)), n_samples, seed)


def _sphere_doc(d: int, n: int, seed: int, nonconvex: float, feasible: str, tag: int,
                r_max: float) -> dict:
    if d < 1:
        raise InputError("d must be at least 1")
    if r_max <= 1.0:
        raise InputError("the estimation annulus must extend beyond the unit sphere")
    rng = np.random.default_rng(np.random.SeedSequence([seed, tag]))
    centers = rng.standard_normal((n, d))
    if feasible == "full":
        set_doc = {"kind": "full", "dim": d}
    elif feasible == "box":
        set_doc = {"kind": "box", "lower": [-2.0] * d, "upper": [2.0] * d}
    else:
        raise InputError(f"unknown feasible set {feasible!r}")
    # Start on the unit sphere in the direction of the mean center.
    direction = centers.mean(axis=0)
    x0 = direction / np.linalg.norm(direction)
    doc = {
        "dim": d,
        "objective": {"kind": "finite_sum", "centers": centers.tolist(), "weights": [1.0] * n, "nonconvex": nonconvex},
        "set": set_doc,
        "x0": x0.tolist(),
        "region": {"kind": "annulus", "dim": d, "r_min": 0.5, "r_max": r_max},
    }
    return doc


def make_sphere(d: int = 10, seed: int = 0, n: int = 20, nonconvex: float = 0.5, feasible: str = "full",
                n_samples: int = 200, r_max: float = 3.0) -> ProblemSpec:
    """Finite-sum objective on the unit sphere ``|x|^2 = 1`` with exact constraints.

    Constants are estimated on the annulus ``0.5 <= |x| <= r_max``; runs
    should check that their iterates stay inside it.
    """
    doc = _sphere_doc(d, n, seed, nonconvex, feasible, 2, r_max)
    doc.update(name="sphere", constraints={"kind": "sphere", "radius": 1.0})
    return _with_constants(doc, AnnulusRegion(d, 0.5, r_max), n_samples, seed)


def make_stoch_sphere(
    d: int = 10,
    noise_levels: tuple[float, float] = (0.1, 0.1),
    seed: int = 0,
    n: int = 20,
    nonconvex: float = 0.5,
    feasible: str = "full",
    n_samples: int = 200,
    r_max: float = 3.0,
) -> ProblemSpec:
    """Sphere problem whose constraint is observed through noisy samples.

    ``noise_levels = (value, jacobian)``: the value noise takes ``+-value``
    and the Jacobian scale noise takes ``+-jacobian``, each with probability 1/2.
    """
    value_level, jac_level = noise_levels
    doc = _sphere_doc(d, n, seed, nonconvex, feasible, 3, r_max)
    doc.update(
        name="stoch_sphere",
        constraints={
            "kind": "stoch_sphere",
            "radius": 1.0,
            "value_noise": [-value_level, value_level],
            "jac_noise": [-jac_level, jac_level],
        },
    )
    return _with_constants(doc, AnnulusRegion(d, 0.5, r_max), n_samples, seed)


BUILTINS: dict[str, Callable[..., ProblemSpec]] = {
    "sharing": make_sharing,
    "sphere": make_sphere,
    "stoch_sphere": make_stoch_sphere,
}


def make_builtin(name: str, **params: Any) -> ProblemSpec:
    if name not in BUILTINS:
        raise ConfigurationError(f"unknown built-in problem {name!r}; choose from {sorted(BUILTINS)}")
    if "noise_levels" in params:
        params["noise_levels"] = tuple(params["noise_levels"])
    return BUILTINS[name](**params)


# --------------------------------------------------------------------------
# Constant estimation


@dataclass(frozen=True)
class BoxRegion:
    lower: Vector
    upper: Vector

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise InputError("box bounds must be nonempty and of equal length")
        if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InputError("sampling box is empty or unbounded")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def scale(self) -> float:
        return float(np.max(self.upper - self.lower)) or 1.0

    def sample(self, rng: np.random.Generator, n: int) -> Matrix:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


@dataclass(frozen=True)
class AnnulusRegion:
    dim: int
    r_min: float
    r_max: float

    def __post_init__(self) -> None:
        if not (0 <= self.r_min <= self.r_max) or self.dim < 1:
            raise InputError("annulus needs 0 <= r_min <= r_max and dim >= 1")

    @property
    def scale(self) -> float:
        return self.r_max or 1.0

    def sample(self, rng: np.random.Generator, n: int) -> Matrix:
        u = rng.standard_normal((n, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        radii = rng.uniform(self.r_min, self.r_max, n)
        # Include both boundary radii, where the extremes usually sit.
        radii[: min(n, 2)] = [self.r_min, self.r_max][: min(n, 2)]
        return u * radii[:, None]


Region = Union[BoxRegion, AnnulusRegion]


def region_from_dict(doc: dict) -> Region:
    if doc.get("kind") == "box":
        return BoxRegion(np.asarray(doc["lower"], float), np.asarray(doc["upper"], float))
    if doc.get("kind") == "annulus":
        return AnnulusRegion(int(doc["dim"]), float(doc["r_min"]), float(doc["r_max"]))
    raise ConfigurationError(f"unknown region kind {doc.get('kind')!r}")


def _constraint_tables(problem: ProblemSpec, x: Vector) -> tuple[Vector, Matrix, Matrix]:
    """Sampled values ``(Z, m)`` and Jacobians ``(Z, m, d)`` with their probabilities."""
    cons = problem.constraints
    if isinstance(cons, StochConstraints):
        vals = np.array([cons.value_sample(x, z) for z in range(cons.n_outcomes)]).reshape(-1, cons.m)
        jacs = np.array([cons.jac_sample(x, z) for z in range(cons.n_outcomes)]).reshape(-1, cons.m, problem.dim)
        return cons.probs, vals, jacs
    value, jac = _exact_constraints(problem, x)
    return np.ones(1), value[None, :], jac[None, :, :]


def estimate_constants(
    problem: ProblemSpec,
    region: Union[Region, tuple, dict],
    n_samples: int = 200,
    seed: int = 0,
    safety: float = SAFETY_FACTOR,
) -> AssumptionConstants:
    """Sampled estimates of the smoothness, variance and boundedness constants.

    Lipschitz-type constants are maxima of mean-square difference quotients
    over random pairs and nearby pairs drawn from ``region``; variances and
    bounds are maxima over sampled points. Every estimate is multiplied by
    ``safety`` (the regularity constant is divided by it).
    """
    if isinstance(region, dict):
        region = region_from_dict(region)
    elif isinstance(region, tuple):
        region = BoxRegion(*region)
    if region.dim != problem.dim:
        raise InputError("sampling region dimension differs from the problem dimension")
    if n_samples < 2:
        raise InputError("need at least two sample points")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    points = region.sample(rng, n_samples)
    partners = region.sample(rng, n_samples)
    directions = rng.standard_normal((n_samples, problem.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    nearby = points + 1e-3 * region.scale * directions
    pf = problem.objective.probs
    m = problem.m

    lip_f = noise_f = bound_f = bound_grad_f = 0.0
    min_f = math.inf
    lip_gc = lip_c = sig_gc = sig_c = 0.0
    b_gc = b_c = b_gc_s = b_c_s = 0.0
    regularity = math.inf

    def tables(x: Vector) -> tuple:
        G = grad_f_all(problem, x)
        pc, vals, jacs = _constraint_tables(problem, x)
        return G, pc, vals, jacs

    cache = [tables(x) for x in points]
    for x, y, z, (G, pc, vals, jacs) in zip(points, partners, nearby, cache):
        mean_g = pf @ G
        noise_f = max(noise_f, math.sqrt(max(0.0, float(pf @ np.sum((G - mean_g) ** 2, axis=1)))))
        bound_grad_f = max(bound_grad_f, float(np.linalg.norm(mean_g)))
        fx = objective_value(problem, x)
        if fx is not None:
            bound_f = max(bound_f, abs(fx))
            min_f = min(min_f, fx)

        mean_v = pc @ vals
        mean_j = np.tensordot(pc, jacs, axes=1)
        if m:
            sig_c = max(sig_c, float(np.max(np.sqrt(pc @ (vals - mean_v) ** 2))))
            sig_gc = max(sig_gc, float(np.max(np.sqrt(pc @ np.sum((jacs - mean_j) ** 2, axis=2)))))
            b_c = max(b_c, float(np.max(np.abs(mean_v))))
            b_gc = max(b_gc, float(np.max(np.linalg.norm(mean_j, axis=1))))
            b_c_s = max(b_c_s, float(np.max(np.abs(vals))))
            b_gc_s = max(b_gc_s, float(np.max(np.linalg.norm(jacs, axis=2))))
            if not isinstance(problem.constraints, LinearConstraints):
                xp = problem.feasible_set.project(x)
                cv, cj = _exact_constraints(problem, xp)
                cn = float(np.linalg.norm(cv))
                if cn > 1e-8:
                    regularity = min(regularity, normal_cone_distance(problem.feasible_set, xp, cj.T @ cv) / cn)

        for other in (y, z):
            gap = float(np.linalg.norm(x - other))
            if gap == 0.0:
                continue
            G2, pc2, vals2, jacs2 = tables(other)
            lip_f = max(lip_f, math.sqrt(float(pf @ np.sum((G - G2) ** 2, axis=1))) / gap)
            if m:
                lip_c = max(lip_c, float(np.max(np.sqrt(pc @ (vals - vals2) ** 2))) / gap)
                lip_gc = max(lip_gc, float(np.max(np.sqrt(pc @ np.sum((jacs - jacs2) ** 2, axis=2)))) / gap)

    values = dict(
        lip_grad_f=lip_f,
        noise_grad_f=noise_f,
        lip_grad_f_sample=lip_f,
        lip_grad_c_sample=lip_gc,
        lip_c_sample=lip_c,
        sigma_grad_f=noise_f,
        sigma_grad_c=sig_gc,
        sigma_c=sig_c,
        bound_grad_c=b_gc,
        bound_c=b_c,
        bound_grad_c_sample=b_gc_s,
        bound_c_sample=b_c_s,
        bound_grad_f=bound_grad_f,
    )
    out = {k: safety * v for k, v in values.items()}
    if min_f < math.inf:
        out["bound_f"] = safety * bound_f
        out["penalty_lower"] = safety * min(0.0, min_f)
    if math.isfinite(regularity):
        out["regularity"] = regularity / safety
    return AssumptionConstants(**out)
