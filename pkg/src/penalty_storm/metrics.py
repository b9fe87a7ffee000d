"""Stationarity, tracking error and potential-function diagnostics.

All quantities here use exact (enumerated) oracles and are meant for trace
snapshots, not for the solver loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional, Union

import numpy as np

from .errors import ConfigurationError, InputError, ParameterError
from .estimator import penalty_grad_exact
from .model import (
    LinearConstraints,
    ProblemSpec,
    Vector,
    _as_vector,
    _exact_constraints,
    exact_grad_f,
    normal_cone_distance,
    objective_value,
)
from .schedules import Case1Schedule, DualSchedule, PenaltySchedule

QP_IMPLIED = "qp-implied"


@dataclass(frozen=True)
class StationarityReading:
    cone_dist: float
    feas: float
    lambda_used: Vector


@dataclass(frozen=True)
class PotentialReading:
    Y: float
    allowance: float


def stationarity(
    problem: ProblemSpec, x: Any, lam: Union[Any, str], rho: Optional[float] = None
) -> StationarityReading:
    """Distance of the Lagrangian gradient to ``-N_X(x)`` and the constraint violation.

    Passing ``lam="qp-implied"`` uses the penalty multiplier ``rho * c(x)``.
    """
    xv = _as_vector(x, problem.dim)
    value, jac = _exact_constraints(problem, xv)
    if isinstance(lam, str):
        if lam != QP_IMPLIED:
            raise InputError(f"unknown multiplier sentinel {lam!r}")
        if rho is None:
            raise InputError("the qp-implied multiplier needs rho")
        lv = rho * value
    else:
        lv = _as_vector(lam, problem.m, "lambda") if problem.m else np.zeros(0)
    residual = exact_grad_f(problem, xv) + jac.T @ lv
    cone = normal_cone_distance(problem.feasible_set, xv, residual)
    return StationarityReading(cone, float(np.linalg.norm(value)), lv)


def tracking_error(problem: ProblemSpec, x: Any, g: Any, rho: float = 0.0, lam: Any = None) -> float:
    """``|g - grad f(x)|`` for linear constraints, otherwise ``|g - grad Q_rho(x, lam)|``."""
    xv = _as_vector(x, problem.dim)
    gv = _as_vector(g, problem.dim, "g")
    if isinstance(problem.constraints, LinearConstraints):
        return float(np.linalg.norm(gv - exact_grad_f(problem, xv)))
    lv = np.zeros(problem.m) if lam is None else lam
    return float(np.linalg.norm(gv - penalty_grad_exact(problem, xv, lv, rho)))


def _require_value(problem: ProblemSpec, x: Vector) -> float:
    value = objective_value(problem, x)
    if value is None:
        raise ConfigurationError("potential functions need an objective value oracle")
    return value


# --------------------------------------------------------------------------
# Linear-constraint potential


def case1_allowance_rate(sched: Case1Schedule, k: Any) -> Any:
    """Per-step allowance coefficient ``v_k`` (multiply by the squared noise bound)."""
    k = np.asarray(k, dtype=np.float64)
    c1, L, m, c = sched.c1, sched.lip_grad_f, sched.m_const, sched.alpha_scale
    rho, delta = sched.rho, sched.delta
    inv_k = sched.inverse_eta(k)
    inv_k1 = sched.inverse_eta(k + 1)
    alpha_k = np.minimum(1.0, c / inv_k**2)
    alpha_k1 = np.minimum(1.0, c / inv_k1**2)
    return (
        6.0 * (1 + c1) * alpha_k**2 / (delta * rho)
        + alpha_k**2 * m * inv_k1 / L
        + 6.0 * alpha_k1**2 * inv_k1 / c
        + 18.0 * (1 + c1) * alpha_k**2 / (rho * delta)
        + 12.0 * m * alpha_k**2 * inv_k / L
    )


def potential_case1(
    problem: ProblemSpec,
    x_prev: Any,
    x: Any,
    lam: Any,
    g: Any,
    g_prev: Any,
    sched: Case1Schedule,
    k: int,
) -> PotentialReading:
    """Potential at iterate ``k+1`` of the linear-constraint method.

    ``x_prev, g_prev`` are ``x_k, g_k``; ``x, lam, g`` are ``x_{k+1},
    lambda_{k+1}, g_{k+1}``. The allowance is ``v_k`` times the squared
    gradient-noise bound.
    """
    cons = problem.constraints
    if not isinstance(cons, LinearConstraints):
        raise InputError("the linear-constraint potential needs linear constraints")
    if k < 0:
        raise ParameterError("k must be nonnegative")
    (noise,) = problem.constants.require("noise_grad_f")
    xk = _as_vector(x_prev, problem.dim, "x_prev")
    x1 = _as_vector(x, problem.dim)
    g1 = _as_vector(g, problem.dim, "g")
    gk = _as_vector(g_prev, problem.dim, "g_prev")
    lv = _as_vector(lam, cons.m, "lambda")

    c1, c2, c3, c4 = sched.c1, sched.c2, sched.c3, sched.c4
    L, m, c, rho, delta = sched.lip_grad_f, sched.m_const, sched.alpha_scale, sched.rho, sched.delta
    inv_k, inv_k1, inv_k2 = (float(sched.inverse_eta(j)) for j in (k, k + 1, k + 2))

    residual = cons.A @ x1 - cons.b
    res_sq = float(residual @ residual)
    lagrangian = _require_value(problem, x1) + float(lv @ residual) + 0.5 * rho * res_sq
    step = x1 - xk
    step_sq = float(step @ step)
    step_q = step_sq * inv_k1 - rho * float(np.sum((cons.A @ step) ** 2))
    beta1 = (
        (1 + c2 + c3) * L * m * inv_k2
        + (6 + c4) * (1 + c1) * L**2 / (rho * delta)
        + 42.0 * (1 + c1) * L**2 / (rho * delta)
        + 28.0 * m * L * inv_k1
    )
    err_new = float(np.sum((g1 - exact_grad_f(problem, x1)) ** 2))
    err_old = float(np.sum((gk - exact_grad_f(problem, xk)) ** 2))
    Y = (
        lagrangian
        + 0.5 * rho * m * inv_k2 * res_sq
        + 0.5 * m * inv_k1 * step_q
        + beta1 * step_sq
        + 2.0 * inv_k1 / c * err_new
        + (6.0 * (1 + c1) / (rho * delta) + 4.0 * m * inv_k / L) * err_old
    )
    allowance = float(case1_allowance_rate(sched, k)) * noise**2
    return PotentialReading(float(Y), allowance)


# --------------------------------------------------------------------------
# Penalty-method potential


def _penalty_value(problem: ProblemSpec, x: Vector, lam: Vector, rho: float) -> float:
    value, _ = _exact_constraints(problem, x)
    return _require_value(problem, x) + float(lam @ value) + 0.5 * rho * float(value @ value)


def case3_allowance(
    problem: ProblemSpec,
    sched: PenaltySchedule,
    k: int,
    lt: float,
    dual: Optional[DualSchedule] = None,
    lambda1: Any = None,
) -> float:
    """Error allowance ``E_{k+1}`` of the penalty-method potential."""
    m = problem.m
    eta_k, rho_k, alpha_k1 = sched.at(k)
    rho_k1 = sched.at(k + 1).rho
    const = problem.constants
    cgc_s, cc_s, sig_f = const.require("bound_grad_c_sample", "bound_c_sample", "sigma_grad_f")
    scale = lt**2 * rho_k1**2 * eta_k
    drift = m**2 * cgc_s**2 * cc_s**2 * (rho_k1 - rho_k) ** 2
    if sched.kind == "case2det":
        return 7.0 * drift / (12.0 * scale) + alpha_k1**2 * sig_f**2 / (12.0 * scale)
    cc, sig_gc, sig_c = const.require("bound_c", "sigma_grad_c", "sigma_c")
    sampling = 2.0 * m**2 * rho_k**2 * (cc**2 * sig_gc**2 + cgc_s**2 * sig_c**2)
    if dual is None:
        return 7.0 * drift / (12.0 * scale) + alpha_k1**2 * (sig_f**2 + sampling) / (12.0 * scale)
    lam1_sq = 0.0 if lambda1 is None else float(np.sum(np.asarray(lambda1) ** 2))
    gamma_k = dual.increment_size(k) if k >= 1 else 0.0
    dual_noise = sig_gc**2 * m**2 * (2.0 * lam1_sq + 32.0 * m * dual.gamma**2)
    return (
        7.0 * drift / (6.0 * scale)
        + 7.0 * gamma_k**2 * m**2 * cgc_s**2 / (6.0 * scale)
        + alpha_k1**2 * (sig_f**2 + dual_noise + sampling) / (8.0 * scale)
    )


def potential_case3(
    problem: ProblemSpec,
    x: Any,
    g: Any,
    sched: PenaltySchedule,
    k: int,
    lam: Any = None,
    lt: Optional[float] = None,
    dual: Optional[DualSchedule] = None,
    lambda1: Any = None,
) -> PotentialReading:
    """Potential at iterate ``k+1`` of the penalty method (``x, g`` are ``x_{k+1}, g_{k+1}``).

    The estimator-error weight is ``1/(72 L^2 rho_{k+1}^2 eta_k)``, which
    equals ``eta_k / alpha_{k+1}`` under the polynomial schedules.
    ``lam`` is the multiplier paired with ``g`` (dual mode only).
    """
    if k < 0:
        raise ParameterError("k must be nonnegative")
    xv = _as_vector(x, problem.dim)
    gv = _as_vector(g, problem.dim, "g")
    lv = np.zeros(problem.m) if lam is None else _as_vector(lam, problem.m, "lambda")
    lt = sched.l_tilde if lt is None else lt
    eta_k = sched.at(k).eta
    rho_k1 = sched.at(k + 1).rho
    err = gv - penalty_grad_exact(problem, xv, lv, rho_k1)
    Y = _penalty_value(problem, xv, lv, rho_k1) + float(err @ err) / (72.0 * lt**2 * rho_k1**2 * eta_k)
    return PotentialReading(Y, case3_allowance(problem, sched, k, lt, dual, lambda1))


def potential_lower_bound(sched: Case1Schedule, noise: float, first_Y: float, k_max: int) -> float:
    """Floor ``-2 V^2 sum v_k - |Y_1|`` for the linear-constraint potential."""
    total = 0.0
    for start in range(1, k_max + 1, 1_000_000):
        ks = np.arange(start, min(k_max, start + 999_999) + 1)
        total += float(np.sum(case1_allowance_rate(sched, ks)))
    return -2.0 * noise**2 * total - abs(first_Y)
