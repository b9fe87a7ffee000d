"""Single-loop solvers: one projected step on the penalty or augmented Lagrangian
function, then one recursive estimator update (and a dual step when enabled).

Index conventions
-----------------
``state.k`` counts the steps taken so far.

* Linear-constraint method: after ``t`` steps the state holds ``x_t``,
  ``lambda_t`` and ``g_t``; step ``t -> t+1`` uses ``eta_{t+1}`` and
  ``alpha_{t+1}``.
* Penalty methods: after ``t`` steps the state holds ``x_{t+1}`` and
  ``g_{t+1}`` (the first iterate is ``x_1``); step ``t -> t+1`` uses
  ``eta_{t+1}``, ``rho_{t+1}``, ``rho_{t+2}`` and ``alpha_{t+2}``. In dual
  mode ``lam`` is the multiplier paired with ``g`` and ``lam_next`` the one
  already computed for the following step.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol

import numpy as np

from .errors import InputError, InvariantViolation, ParameterError, PreconditionError
from .estimator import BundleSampler, EstimatorState, SampleBundle, _penalty_grad
from .metrics import (
    potential_case1,
    potential_case3,
    potential_lower_bound,
    stationarity,
    tracking_error,
)
from .model import (
    MEMBERSHIP_TOL,
    DetConstraints,
    FullSpace,
    LinearConstraints,
    ProblemSpec,
    StochConstraints,
    Vector,
    _as_vector,
    _exact_constraints,
    objective_value,
)
from .schedules import Case1Schedule, DualSchedule, StepParams, dual_gamma

SOLVER_KINDS = ("LinAlm", "StochQP", "StochAlm", "DetQP")

TRACE_FIELDS = (
    "k",
    "eta_k",
    "rho_k",
    "alpha_k",
    "feas",
    "cone_dist",
    "tracking_err",
    "scaled_step",
    "potential_Y",
    "allowance",
    "objective",
    "wall_nanos",
)


class Schedule(Protocol):
    kind: str

    def at(self, k: int) -> StepParams: ...


@dataclass
class SolverState:
    """Everything needed to take the next step; advanced in place by the step functions."""

    x: Vector
    lam: Vector
    estimator: EstimatorState
    k: int
    sampler: BundleSampler
    prev_x: Vector
    prev_g: Vector
    lam_prev: Vector
    lam_next: Optional[Vector] = None
    lambda1: Optional[Vector] = None
    last_eta: float = math.nan
    last_alpha: float = 1.0

    @property
    def g(self) -> Vector:
        return self.estimator.g


@dataclass(frozen=True)
class RunConfig:
    """One solver run.

    ``dual`` is required for ``StochAlm`` and ignored otherwise. ``potential``
    turns on potential-function monitoring at trace rows; ``timing`` fills the
    ``wall_nanos`` column (otherwise zero, which keeps traces reproducible
    byte for byte).
    """

    solver: str
    schedule: Any
    K: int
    seed: int = 0
    stride: int = 1
    dual: Optional[DualSchedule] = None
    potential: bool = False
    timing: bool = False
    x0: Optional[Vector] = None
    lambda0: Optional[Vector] = None
    l_tilde: Optional[float] = None

    def __post_init__(self) -> None:
        if self.solver not in SOLVER_KINDS:
            raise InputError(f"unknown solver {self.solver!r}; choose from {SOLVER_KINDS}")
        if self.K < 1:
            raise ParameterError("K must be at least 1")
        if self.stride < 1:
            raise ParameterError("stride must be at least 1")
        if self.solver == "StochAlm" and self.dual is None:
            raise InputError("StochAlm needs a dual schedule")
        if self.solver == "LinAlm" and not isinstance(self.schedule, Case1Schedule):
            raise InputError("LinAlm needs a Case1Schedule")


@dataclass
class TraceRow:
    k: int
    eta_k: float
    rho_k: float
    alpha_k: float
    feas: float
    cone_dist: float
    tracking_err: float
    scaled_step: float
    potential_Y: Optional[float]
    allowance: Optional[float]
    objective: Optional[float]
    wall_nanos: int = 0

    def values(self) -> tuple:
        return tuple(getattr(self, name) for name in TRACE_FIELDS)


@dataclass
class RunReport:
    rows: list[TraceRow]
    selected_index: int
    selected_cone_dist: float = math.nan
    selected_feas: float = math.nan
    aborted: bool = False
    abort_reason: str = ""
    potential_floor_violated: Optional[bool] = None
    final_state: Optional[SolverState] = field(default=None, repr=False)


# --------------------------------------------------------------------------
# Steps


def _check_linear(problem: ProblemSpec) -> LinearConstraints:
    cons = problem.constraints
    if not isinstance(cons, LinearConstraints):
        raise InputError("the linear-constraint method needs linear constraints")
    if not isinstance(problem.feasible_set, FullSpace):
        raise InputError("the linear-constraint method runs on the full space only")
    return cons


def _check_nonlinear(problem: ProblemSpec) -> None:
    if not isinstance(problem.constraints, (DetConstraints, StochConstraints)):
        raise InputError("penalty methods need nonlinear constraints")


def step_linear_alm(state: SolverState, problem: ProblemSpec, sched: Any) -> SolverState:
    """One linearized augmented Lagrangian step.

    ``x' = x - eta_{k+1}(g + A^T lam + rho A^T(Ax - b))``, then
    ``lam' = lam + rho (A x' - b)``, then the estimator update with a fresh
    sample shared by both gradient evaluations.
    """
    cons = _check_linear(problem)
    A, b = cons.A, cons.b
    eta, rho, alpha = sched.at(state.k + 1)
    x, lam, g = state.x, state.lam, state.estimator.g
    x_new = x - eta * (g + A.T @ (lam + rho * (A @ x - b)))
    lam_new = lam + rho * (A @ x_new - b)
    xi = state.sampler.next().xi0
    grad = problem.objective.grad_sample
    g_new = grad(x_new, xi) + (1.0 - alpha) * (g - grad(x, xi))

    state.prev_x, state.prev_g, state.lam_prev = x, g, lam
    state.x, state.lam = x_new, lam_new
    est = state.estimator
    est.g, est.last_x, est.last_rho = g_new, x_new, rho
    state.k += 1
    state.last_eta, state.last_alpha = eta, alpha
    return state


def step_qp_stochastic(
    state: SolverState, problem: ProblemSpec, sched: Any, dual: Optional[DualSchedule] = None
) -> SolverState:
    """One projected penalty-gradient step followed by the estimator update.

    In dual mode the estimator pairs the new point with the multiplier
    computed at the end of the previous step, and the next multiplier is then
    formed from the fresh constraint sample at the new point.
    """
    _check_nonlinear(problem)
    j = state.k + 1
    eta, rho_j, alpha = sched.at(j)
    rho_next = sched.at(j + 1).rho
    x, g = state.x, state.estimator.g
    x_new = problem.feasible_set.project(x - eta * g)
    bundle = state.sampler.next()
    if dual is None:
        lam_cur = lam_new = state.lam
    else:
        lam_cur, lam_new = state.lam, state.lam_next
    g_new = _penalty_grad(problem, x_new, lam_new, rho_next, bundle) + (1.0 - alpha) * (
        g - _penalty_grad(problem, x, lam_cur, rho_j, bundle)
    )
    if dual is not None:
        lam_after = _dual_step(problem, dual, state.lambda1, lam_new, x_new, bundle, j + 1)
        state.lam_prev, state.lam, state.lam_next = lam_cur, lam_new, lam_after
    else:
        state.lam_prev = lam_cur

    state.prev_x, state.prev_g = x, g
    state.x = x_new
    est = state.estimator
    est.g, est.last_x, est.last_rho, est.last_lambda = g_new, x_new, rho_next, lam_new
    state.k += 1
    state.last_eta, state.last_alpha = eta, alpha
    return state


def _sampled_value(problem: ProblemSpec, x: Vector, bundle: SampleBundle) -> Vector:
    cons = problem.constraints
    if isinstance(cons, StochConstraints):
        return cons.value_sample(x, bundle.zeta2)
    return cons.fun(x)


def _dual_step(
    problem: ProblemSpec,
    dual: DualSchedule,
    lambda1: Vector,
    lam: Vector,
    x: Vector,
    bundle: SampleBundle,
    k: int,
) -> Vector:
    c_sample = _sampled_value(problem, x, bundle)
    step = np.array([dual_gamma(dual, k, float(ci)) * float(ci) for ci in c_sample])
    lam_after = lam + step
    bound = np.abs(lambda1) + 4.0 * dual.gamma
    if np.any(np.abs(lam_after) > bound):
        raise InvariantViolation(f"multiplier left the band |lambda_1| + 4 gamma at step {k}")
    return lam_after


def select_output(K: int, rng: np.random.Generator) -> int:
    """Uniform draw from ``{1, ..., K}``."""
    if K < 1:
        raise ParameterError("K must be at least 1")
    return int(rng.integers(1, K + 1))


# --------------------------------------------------------------------------
# Initialization


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    sampling, selection = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(sampling), np.random.default_rng(selection)


def init_state(problem: ProblemSpec, config: RunConfig, rng: np.random.Generator) -> SolverState:
    """Starting state: ``x0`` (config, then problem, then the projection of 0),
    ``lambda0`` (default zero) and one fresh estimator sample.
    """
    if config.x0 is not None:
        x0 = _as_vector(config.x0, problem.dim, "x0")
    elif problem.x0 is not None:
        x0 = problem.x0.copy()
    else:
        x0 = np.zeros(problem.dim)
    x0 = problem.feasible_set.project(x0)
    m = problem.m
    lam0 = np.zeros(m) if config.lambda0 is None else _as_vector(config.lambda0, m, "lambda0")
    cons = problem.constraints
    probs_c = cons.probs if isinstance(cons, StochConstraints) else None
    sampler = BundleSampler(rng, problem.objective.probs, probs_c)
    bundle = sampler.next()

    if config.solver == "LinAlm":
        _check_linear(problem)
        g0 = problem.objective.grad_sample(x0, bundle.xi0)
        rho = config.schedule.rho
        est = EstimatorState(g0, x0, rho, lam0)
        return SolverState(x0, lam0, est, 0, sampler, x0, g0, lam0, last_eta=config.schedule.at(0).eta)

    _check_nonlinear(problem)
    rho1 = config.schedule.at(1).rho
    g1 = _penalty_grad(problem, x0, lam0, rho1, bundle)
    est = EstimatorState(g1, x0, rho1, lam0)
    state = SolverState(x0, lam0, est, 0, sampler, x0, g1, lam0, lambda1=lam0,
                        last_eta=config.schedule.at(0).eta)
    if config.dual is not None and config.solver == "StochAlm":
        state.lam_next = _dual_step(problem, config.dual, lam0, lam0, x0, bundle, 1)
    return state


# --------------------------------------------------------------------------
# Run loop


class _Recorder:
    """Builds trace rows and stationarity readings from the current state."""

    def __init__(self, problem: ProblemSpec, config: RunConfig):
        self.problem = problem
        self.config = config
        self.sched = config.schedule
        self.linear = config.solver == "LinAlm"
        self.dual = config.dual if config.solver == "StochAlm" else None
        self.lt = config.l_tilde

    def multiplier(self, state: SolverState) -> Vector:
        if self.linear:
            return state.lam
        rho_step = self.sched.at(max(state.k, 1)).rho
        value, _ = _exact_constraints(self.problem, state.x)
        base = state.lam_prev if self.dual is not None else 0.0
        return base + rho_step * value

    def reading(self, state: SolverState) -> tuple[float, float]:
        r = stationarity(self.problem, state.x, self.multiplier(state))
        return r.cone_dist, r.feas

    def row(self, state: SolverState, wall: int) -> TraceRow:
        p, t = self.problem, state.k
        cone, feas = self.reading(state)
        step = float(np.linalg.norm(state.x - state.prev_x))
        scaled = step / state.last_eta if t >= 1 else 0.0
        alpha = state.last_alpha if t >= 1 else 1.0
        Y = allowance = None
        if self.linear:
            rho = self.sched.rho
            err = tracking_error(p, state.x, state.g)
            if self.config.potential and t >= 1:
                pr = potential_case1(p, state.prev_x, state.x, state.lam, state.g, state.prev_g, self.sched, t - 1)
                Y, allowance = pr.Y, pr.allowance
        else:
            rho = self.sched.at(t + 1).rho
            lam = state.lam if self.dual is not None else None
            err = tracking_error(p, state.x, state.g, rho, lam)
            if self.config.potential:
                pr = potential_case3(p, state.x, state.g, self.sched, t, lam=lam, lt=self.lt,
                                     dual=self.dual, lambda1=state.lambda1)
                Y, allowance = pr.Y, pr.allowance
        return TraceRow(t, state.last_eta, rho, alpha, feas, cone, err, scaled, Y, allowance,
                        objective_value(p, state.x), wall)


def _abort_row(k: int) -> TraceRow:
    nan = math.nan
    return TraceRow(k, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan, 0)


def run(problem: ProblemSpec, config: RunConfig) -> RunReport:
    """Run ``config.K`` steps and record trace rows every ``config.stride`` steps
    (and at the last step). The stationarity reading at a uniformly drawn
    iteration is stored in the report.
    """
    sample_rng, select_rng = _streams(config.seed)
    k_hat = select_output(config.K, select_rng)
    state = init_state(problem, config, sample_rng)
    recorder = _Recorder(problem, config)
    if config.solver == "LinAlm":
        step = lambda s: step_linear_alm(s, problem, config.schedule)  # noqa: E731
    else:
        dual = config.dual if config.solver == "StochAlm" else None
        step = lambda s: step_qp_stochastic(s, problem, config.schedule, dual)  # noqa: E731

    start = time.perf_counter_ns()
    clock = (lambda: time.perf_counter_ns() - start) if config.timing else (lambda: 0)
    report = RunReport([recorder.row(state, clock())], k_hat)
    for _ in range(config.K):
        try:
            step(state)
        except InvariantViolation as exc:
            report.aborted, report.abort_reason = True, str(exc)
            report.rows.append(_abort_row(state.k + 1))
            break
        if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.g))):
            report.aborted, report.abort_reason = True, f"non-finite iterate at step {state.k}"
            report.rows.append(_abort_row(state.k))
            break
        if not problem.feasible_set.contains(state.x, MEMBERSHIP_TOL):
            raise PreconditionError(f"iterate left the feasible set at step {state.k}")
        if state.k == k_hat:
            report.selected_cone_dist, report.selected_feas = recorder.reading(state)
        if state.k % config.stride == 0 or state.k == config.K:
            report.rows.append(recorder.row(state, clock()))
    report.final_state = state

    if config.solver == "LinAlm" and config.potential and not report.aborted:
        ys = [r.potential_Y for r in report.rows if r.potential_Y is not None]
        if ys:
            noise = problem.constants.require("noise_grad_f")[0]
            floor = potential_lower_bound(config.schedule, noise, ys[0], config.K)
            report.potential_floor_violated = min(ys) < floor
    return report
