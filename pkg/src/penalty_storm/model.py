"""Problem data: stochastic oracles, constraint systems, feasible sets.

Every sample space is finite with explicit probabilities, so expectations can
be computed exactly by enumeration. Feasible sets carry their own projection
and normal-cone distance in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Optional, Union

import numpy as np
from numpy.typing import NDArray

from .errors import (
    ConfigurationError,
    DegenerateMatrixError,
    InputError,
    PreconditionError,
)

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]

#: Points farther than this outside the feasible set are rejected.
MEMBERSHIP_TOL = 1e-9
#: Relative tolerance for calling a box coordinate active.
ACTIVE_TOL = 1e-10


def _as_vector(x: Any, dim: int, what: str = "x") -> Vector:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape != (dim,):
        raise InputError(f"{what} has shape {arr.shape}, expected ({dim},)")
    return arr


def _check_probs(probs: Any, what: str) -> Vector:
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise InputError(f"{what}: sample space is empty")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InputError(f"{what}: probabilities must be finite and nonnegative")
    if abs(p.sum() - 1.0) > 1e-12:
        raise InputError(f"{what}: probabilities sum to {p.sum()!r}, not 1")
    return p


def _check_outcome(outcome: Any, n: int, what: str) -> int:
    if isinstance(outcome, (bool, np.bool_)) or not isinstance(outcome, (int, np.integer)):
        raise InputError(f"{what}: outcome {outcome!r} is not an integer index")
    if not 0 <= outcome < n:
        raise InputError(f"{what}: outcome {outcome} outside 0..{n - 1}")
    return int(outcome)


# --------------------------------------------------------------------------
# Feasible sets


class FeasibleSet:
    """Closed convex set with an exact projection and normal-cone distance."""

    dim: int

    def project(self, x: Vector) -> Vector:
        raise NotImplementedError

    def contains(self, x: Vector, tol: float = MEMBERSHIP_TOL) -> bool:
        raise NotImplementedError

    def _cone_distance(self, x: Vector, v: Vector) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class FullSpace(FeasibleSet):
    dim: int

    def project(self, x: Vector) -> Vector:
        return x

    def contains(self, x: Vector, tol: float = MEMBERSHIP_TOL) -> bool:
        return True

    def _cone_distance(self, x: Vector, v: Vector) -> float:
        return float(np.linalg.norm(v))

    def to_dict(self) -> dict:
        return {"kind": "full", "dim": self.dim}


def _box_terms(x: Vector, v: Vector, lower: Vector, upper: Vector) -> float:
    finite_lo = np.isfinite(lower)
    finite_hi = np.isfinite(upper)
    lo = np.where(finite_lo, lower, 0.0)
    hi = np.where(finite_hi, upper, 0.0)
    at_lo = finite_lo & (np.abs(x - lo) <= ACTIVE_TOL * (1.0 + np.abs(lo)))
    at_hi = finite_hi & (np.abs(x - hi) <= ACTIVE_TOL * (1.0 + np.abs(hi)))
    terms = np.where(at_lo, np.minimum(v, 0.0), v)
    terms = np.where(at_hi, np.maximum(v, 0.0), terms)
    terms = np.where(at_lo & at_hi, 0.0, terms)
    return float(np.sqrt(np.sum(terms * terms)))


@dataclass(frozen=True, eq=False)
class Box(FeasibleSet):
    """Coordinatewise bounds; infinite entries are allowed."""

    lower: Vector
    upper: Vector
    dim: int = field(init=False)

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise InputError("box bounds have different lengths")
        if np.any(lo > hi):
            raise InputError("box is empty: some lower bound exceeds its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "dim", lo.size)

    def project(self, x: Vector) -> Vector:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: Vector, tol: float = MEMBERSHIP_TOL) -> bool:
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def _cone_distance(self, x: Vector, v: Vector) -> float:
        return _box_terms(x, v, self.lower, self.upper)

    def to_dict(self) -> dict:
        return {"kind": "box", "lower": _json_floats(self.lower), "upper": _json_floats(self.upper)}


@dataclass(frozen=True)
class NonnegativeOrthant(FeasibleSet):
    dim: int

    def project(self, x: Vector) -> Vector:
        return np.maximum(x, 0.0)

    def contains(self, x: Vector, tol: float = MEMBERSHIP_TOL) -> bool:
        return bool(np.all(x >= -tol))

    def _cone_distance(self, x: Vector, v: Vector) -> float:
        return _box_terms(x, v, np.zeros(self.dim), np.full(self.dim, np.inf))

    def to_dict(self) -> dict:
        return {"kind": "orthant", "dim": self.dim}


@dataclass(frozen=True, eq=False)
class Ball(FeasibleSet):
    center: Vector
    radius: float
    dim: int = field(init=False)

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=np.float64).reshape(-1)
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise InputError("ball radius must be positive and finite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "dim", c.size)

    def _inside(self, dist: float) -> bool:
        # A few ulps of slack keep project() exactly idempotent after rescaling.
        return dist <= self.radius * (1.0 + 4.0 * np.finfo(float).eps)

    def project(self, x: Vector) -> Vector:
        y = x - self.center
        dist = float(np.linalg.norm(y))
        if self._inside(dist):
            return x
        return self.center + (y * self.radius) / dist

    def contains(self, x: Vector, tol: float = MEMBERSHIP_TOL) -> bool:
        return float(np.linalg.norm(x - self.center)) <= self.radius + tol

    def _cone_distance(self, x: Vector, v: Vector) -> float:
        y = x - self.center
        dist = float(np.linalg.norm(y))
        if dist < self.radius - ACTIVE_TOL * (1.0 + self.radius):
            return float(np.linalg.norm(v))
        normal = y / dist
        along = float(normal @ v)
        tangential = v - along * normal
        # -N_X(x) is the ray {-t * normal : t >= 0}.
        return math.hypot(float(np.linalg.norm(tangential)), max(along, 0.0))

    def to_dict(self) -> dict:
        return {"kind": "ball", "center": _json_floats(self.center), "radius": self.radius}


def _json_floats(arr: Vector) -> list:
    return [float(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf") for v in arr]


def _parse_floats(values: list) -> Vector:
    return np.array([float(v) for v in values], dtype=np.float64)


def set_from_dict(doc: dict) -> FeasibleSet:
    kind = doc.get("kind")
    if kind == "full":
        return FullSpace(int(doc["dim"]))
    if kind == "box":
        return Box(_parse_floats(doc["lower"]), _parse_floats(doc["upper"]))
    if kind == "orthant":
        return NonnegativeOrthant(int(doc["dim"]))
    if kind == "ball":
        return Ball(_parse_floats(doc["center"]), float(doc["radius"]))
    raise ConfigurationError(f"unsupported feasible set kind {kind!r}")


def project(feasible_set: FeasibleSet, x: Any) -> Vector:
    """Euclidean projection onto ``feasible_set``."""
    xv = _as_vector(x, feasible_set.dim)
    if not np.all(np.isfinite(xv)):
        raise PreconditionError("cannot project a non-finite point")
    return feasible_set.project(xv)


def normal_cone_distance(feasible_set: FeasibleSet, x: Any, v: Any) -> float:
    """Distance from ``v`` to the negated normal cone of the set at ``x``.

    Points within ``MEMBERSHIP_TOL`` outside the set are snapped onto it first.
    """
    xv = _as_vector(x, feasible_set.dim)
    vv = _as_vector(v, feasible_set.dim, "v")
    if not feasible_set.contains(xv, MEMBERSHIP_TOL):
        raise PreconditionError("point lies outside the feasible set")
    return feasible_set._cone_distance(feasible_set.project(xv), vv)


# --------------------------------------------------------------------------
# Oracles


@dataclass(frozen=True, eq=False)
class ObjectiveOracle:
    """Stochastic gradient oracle over a finite sample space.

    ``grad_table`` and ``value_table`` are optional vectorized forms that
    return one row per outcome; they only speed up enumeration.
    """

    probs: Vector
    grad_sample: Callable[[Vector, int], Vector]
    value_sample: Optional[Callable[[Vector, int], float]] = None
    grad_table: Optional[Callable[[Vector], Matrix]] = None
    value_table: Optional[Callable[[Vector], Vector]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", _check_probs(self.probs, "objective"))

    @property
    def n_outcomes(self) -> int:
        return self.probs.size


class ConstraintSystem:
    """Base class for the three constraint variants."""

    m: int

    def to_dict(self) -> dict:
        raise ConfigurationError(f"{type(self).__name__} has no JSON form")


@dataclass(frozen=True, eq=False)
class LinearConstraints(ConstraintSystem):
    """``A x = b``; ``delta`` is the smallest nonzero eigenvalue of ``A^T A``."""

    A: Matrix
    b: Vector
    delta: Optional[float] = None
    m: int = field(init=False)

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if b.size != A.shape[0]:
            raise InputError("b length does not match the rows of A")
        computed = delta_of(A)
        if self.delta is not None and abs(float(self.delta) - computed) > 1e-8:
            raise InputError(f"delta={self.delta} disagrees with the spectrum of A^T A ({computed})")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "delta", computed)
        object.__setattr__(self, "m", A.shape[0])

    @property
    def dim(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True, eq=False)
class DetConstraints(ConstraintSystem):
    """Deterministic nonlinear constraints ``c(x) = 0``."""

    m: int
    fun: Callable[[Vector], Vector]
    jac: Callable[[Vector], Matrix]


@dataclass(frozen=True, eq=False)
class StochConstraints(ConstraintSystem):
    """Constraints known only through samples ``c~(x, zeta)`` and ``grad c~(x, zeta)``.

    ``exact_fun``/``exact_jac`` are the registered closed forms of the means;
    enumeration over the sample space must reproduce them.
    """

    m: int
    probs: Vector
    value_sample: Callable[[Vector, int], Vector]
    jac_sample: Callable[[Vector, int], Matrix]
    exact_fun: Optional[Callable[[Vector], Vector]] = None
    exact_jac: Optional[Callable[[Vector], Matrix]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", _check_probs(self.probs, "constraints"))

    @property
    def n_outcomes(self) -> int:
        return self.probs.size


def delta_of(A: Any) -> float:
    """Smallest eigenvalue of ``A^T A`` above ``1e-10`` times the largest."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    eig = np.linalg.eigvalsh(A.T @ A)
    top = float(eig[-1])
    if top <= 0.0:
        raise DegenerateMatrixError("A^T A has no positive eigenvalue")
    nonzero = eig[eig > 1e-10 * top]
    return float(nonzero[0])


# --------------------------------------------------------------------------
# Constants and the problem bundle


@dataclass(frozen=True)
class AssumptionConstants:
    """Smoothness, variance, boundedness and regularity constants.

    ``None`` marks a constant that was not supplied; consumers that need it
    raise :class:`ConfigurationError`.

    Attributes:
        lip_grad_f: mean-square smoothness of the objective's sampled gradient.
        noise_grad_f: bound on the standard deviation of the sampled gradient.
        lip_grad_f_sample: mean-square smoothness used by the penalty regimes.
        lip_grad_c_sample: mean-square smoothness of each sampled constraint gradient.
        lip_c_sample: mean-square Lipschitz constant of each sampled constraint value.
        sigma_grad_f, sigma_grad_c, sigma_c: sampling standard deviations.
        bound_grad_c, bound_c: bounds on the exact constraint gradient and value.
        bound_grad_c_sample, bound_c_sample: the same for sampled quantities.
        bound_f, bound_grad_f: bounds on the objective and its gradient.
        penalty_lower: lower bound on the penalty function.
        regularity: constant with d(grad c^T c, -N_X) >= regularity * |c|.
    """

    lip_grad_f: Optional[float] = None
    noise_grad_f: Optional[float] = None
    lip_grad_f_sample: Optional[float] = None
    lip_grad_c_sample: Optional[float] = None
    lip_c_sample: Optional[float] = None
    sigma_grad_f: Optional[float] = None
    sigma_grad_c: Optional[float] = None
    sigma_c: Optional[float] = None
    bound_grad_c: Optional[float] = None
    bound_c: Optional[float] = None
    bound_grad_c_sample: Optional[float] = None
    bound_c_sample: Optional[float] = None
    bound_f: Optional[float] = None
    bound_grad_f: Optional[float] = None
    penalty_lower: Optional[float] = None
    regularity: Optional[float] = None

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if f.name == "penalty_lower":
                if not math.isfinite(value):
                    raise InputError("penalty_lower must be finite")
                continue
            if not (value >= 0 and math.isfinite(value)):
                raise InputError(f"constant {f.name} must be finite and nonnegative, got {value}")

    def require(self, *names: str) -> tuple:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ConfigurationError(f"missing constants: {', '.join(missing)}")
        return tuple(float(getattr(self, n)) for n in names)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}

    @classmethod
    def from_dict(cls, doc: dict) -> "AssumptionConstants":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown constants: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in doc.items()})


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """A constrained stochastic problem.

    ``grad_f`` is the registered closed-form gradient of the mean objective
    (required for built-in problems). ``x0`` is an optional preferred
    starting point; ``source`` is the JSON document the problem was built
    from, if any.
    """

    dim: int
    objective: ObjectiveOracle
    constraints: ConstraintSystem
    feasible_set: FeasibleSet
    constants: AssumptionConstants = field(default_factory=AssumptionConstants)
    grad_f: Optional[Callable[[Vector], Vector]] = None
    x0: Optional[Vector] = None
    name: str = "custom"
    source: Optional[dict] = None

    def __post_init__(self) -> None:
        if self.feasible_set.dim != self.dim:
            raise InputError("feasible set dimension differs from the problem dimension")
        if isinstance(self.constraints, LinearConstraints) and self.constraints.dim != self.dim:
            raise InputError("constraint matrix width differs from the problem dimension")
        if self.x0 is not None:
            object.__setattr__(self, "x0", _as_vector(self.x0, self.dim, "x0"))

    @property
    def m(self) -> int:
        return self.constraints.m


# --------------------------------------------------------------------------
# Oracle access


def sample_grad_f(problem: ProblemSpec, x: Any, xi: Any) -> Vector:
    """Sampled objective gradient for outcome ``xi``."""
    xv = _as_vector(x, problem.dim)
    idx = _check_outcome(xi, problem.objective.n_outcomes, "objective")
    return np.asarray(problem.objective.grad_sample(xv, idx), dtype=np.float64)


def grad_f_all(problem: ProblemSpec, x: Vector) -> Matrix:
    """Sampled gradients for every outcome, one row each."""
    obj = problem.objective
    if obj.grad_table is not None:
        return obj.grad_table(x)
    return np.array([obj.grad_sample(x, i) for i in range(obj.n_outcomes)])


def exact_grad_f(problem: ProblemSpec, x: Any) -> Vector:
    """Mean objective gradient by full enumeration of the sample space."""
    xv = _as_vector(x, problem.dim)
    return problem.objective.probs @ grad_f_all(problem, xv)


def objective_value(problem: ProblemSpec, x: Any) -> Optional[float]:
    """Mean objective value by enumeration, or ``None`` without a value oracle."""
    xv = _as_vector(x, problem.dim)
    obj = problem.objective
    if obj.value_table is not None:
        return float(obj.probs @ obj.value_table(xv))
    if obj.value_sample is None:
        return None
    return float(sum(p * obj.value_sample(xv, i) for i, p in enumerate(obj.probs)))


@dataclass(frozen=True)
class Sampled:
    """Evaluation mode selecting one constraint outcome."""

    zeta: int


EXACT = "exact"
EvalMode = Union[str, Sampled]


def constraints_eval(problem: ProblemSpec, x: Any, mode: EvalMode = EXACT) -> tuple[Vector, Matrix]:
    """Constraint value and Jacobian, exact or for a single sample."""
    xv = _as_vector(x, problem.dim)
    cons = problem.constraints
    if isinstance(mode, Sampled):
        if not isinstance(cons, StochConstraints):
            raise InputError("sampled evaluation requires stochastic constraints")
        z = _check_outcome(mode.zeta, cons.n_outcomes, "constraints")
        return (
            np.asarray(cons.value_sample(xv, z), dtype=np.float64).reshape(cons.m),
            np.asarray(cons.jac_sample(xv, z), dtype=np.float64).reshape(cons.m, problem.dim),
        )
    if mode != EXACT:
        raise InputError(f"unknown evaluation mode {mode!r}")
    return _exact_constraints(problem, xv)


def _exact_constraints(problem: ProblemSpec, x: Vector) -> tuple[Vector, Matrix]:
    cons = problem.constraints
    if isinstance(cons, LinearConstraints):
        return cons.A @ x - cons.b, cons.A
    if isinstance(cons, DetConstraints):
        return (
            np.asarray(cons.fun(x), dtype=np.float64).reshape(cons.m),
            np.asarray(cons.jac(x), dtype=np.float64).reshape(cons.m, problem.dim),
        )
    if isinstance(cons, StochConstraints):
        value = np.zeros(cons.m)
        jac = np.zeros((cons.m, problem.dim))
        for z, p in enumerate(cons.probs):
            value += p * np.asarray(cons.value_sample(x, z), dtype=np.float64).reshape(cons.m)
            jac += p * np.asarray(cons.jac_sample(x, z), dtype=np.float64).reshape(cons.m, problem.dim)
        return value, jac
    raise InputError(f"unsupported constraint system {type(cons).__name__}")
