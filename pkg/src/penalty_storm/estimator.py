"""Recursive variance-reduced gradient estimator and the penalty-gradient oracle."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import InputError, ParameterError
from .model import (
    DetConstraints,
    LinearConstraints,
    Matrix,
    ProblemSpec,
    StochConstraints,
    Vector,
    _as_vector,
    _check_outcome,
    _exact_constraints,
    exact_grad_f,
)


@dataclass
class EstimatorState:
    """Current gradient estimate and the point/penalty/multiplier it belongs to."""

    g: Vector
    last_x: Vector
    last_rho: float = 0.0
    last_lambda: Vector = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.last_lambda is None:
            self.last_lambda = np.zeros(0)


@dataclass(frozen=True)
class SampleBundle:
    """One objective outcome and two independent constraint outcomes."""

    xi0: int
    zeta1: int = 0
    zeta2: int = 0


def storm_update(g: Any, g_new_at_new: Any, g_old_at_old: Any, alpha: float) -> Vector:
    """Return ``g_new_at_new + (1 - alpha) * (g - g_old_at_old)``.

    Both fresh evaluations must come from the same sample.
    """
    if not (0.0 < alpha <= 1.0):
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    g = np.asarray(g, dtype=np.float64)
    new = np.asarray(g_new_at_new, dtype=np.float64)
    old = np.asarray(g_old_at_old, dtype=np.float64)
    if not (g.shape == new.shape == old.shape):
        raise InputError("storm_update operands differ in shape")
    return new + (1.0 - alpha) * (g - old)


def _penalty_grad(problem: ProblemSpec, x: Vector, lam: Vector, rho: float, bundle: SampleBundle) -> Vector:
    grad = problem.objective.grad_sample(x, bundle.xi0)
    cons = problem.constraints
    if isinstance(cons, StochConstraints):
        jac = cons.jac_sample(x, bundle.zeta1)
        value = cons.value_sample(x, bundle.zeta2)
    else:
        value = cons.fun(x)
        jac = cons.jac(x)
    return grad + jac.T @ (lam + rho * value)


def penalty_grad_sample(problem: ProblemSpec, x: Any, lam: Any, rho: float, bundle: SampleBundle) -> Vector:
    """Two-sample unbiased estimate of the penalty (or augmented Lagrangian) gradient.

    Jacobian rows are sampled with ``bundle.zeta1`` and constraint values with
    ``bundle.zeta2``; deterministic constraints ignore both and are evaluated
    exactly.
    """
    cons = problem.constraints
    if isinstance(cons, LinearConstraints) or not isinstance(cons, (StochConstraints, DetConstraints)):
        raise InputError("penalty_grad_sample needs nonlinear constraints")
    if rho < 0:
        raise ParameterError("rho must be nonnegative")
    xv = _as_vector(x, problem.dim)
    lv = _as_vector(lam, cons.m, "lambda") if cons.m else np.zeros(0)
    _check_outcome(bundle.xi0, problem.objective.n_outcomes, "objective")
    if isinstance(cons, StochConstraints):
        _check_outcome(bundle.zeta1, cons.n_outcomes, "constraints")
        _check_outcome(bundle.zeta2, cons.n_outcomes, "constraints")
    return _penalty_grad(problem, xv, lv, float(rho), bundle)


def penalty_grad_exact(problem: ProblemSpec, x: Any, lam: Any, rho: float) -> Vector:
    """Exact gradient of ``f + <lam, c> + rho/2 |c|^2``."""
    xv = _as_vector(x, problem.dim)
    value, jac = _exact_constraints(problem, xv)
    lv = _as_vector(lam, problem.m, "lambda") if problem.m else np.zeros(0)
    return exact_grad_f(problem, xv) + jac.T @ (lv + rho * value)


class BundleSampler:
    """Draws sample bundles from a numpy generator in fixed-size blocks.

    Block drawing keeps the per-iteration cost low; the sequence depends only
    on the generator state, so runs stay reproducible.
    """

    def __init__(self, rng: np.random.Generator, objective_probs: Vector, constraint_probs: Vector | None,
                 block: int = 4096):
        self._rng = rng
        self._cdf_f = np.cumsum(objective_probs)
        self._cdf_c = None if constraint_probs is None else np.cumsum(constraint_probs)
        self._block = block
        self._pos = block
        self._xi: Matrix = np.empty(0)
        self._z1: Matrix = np.empty(0)
        self._z2: Matrix = np.empty(0)

    @staticmethod
    def _draw(rng: np.random.Generator, cdf: np.ndarray, size: int) -> np.ndarray:
        idx = np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right")
        return np.minimum(idx, cdf.size - 1)

    def _refill(self) -> None:
        self._xi = self._draw(self._rng, self._cdf_f, self._block).tolist()
        if self._cdf_c is not None:
            self._z1 = self._draw(self._rng, self._cdf_c, self._block).tolist()
            self._z2 = self._draw(self._rng, self._cdf_c, self._block).tolist()
        self._pos = 0

    def next(self) -> SampleBundle:
        if self._pos >= self._block:
            self._refill()
        i = self._pos
        self._pos += 1
        if self._cdf_c is None:
            return SampleBundle(self._xi[i])
        return SampleBundle(self._xi[i], self._z1[i], self._z2[i])
