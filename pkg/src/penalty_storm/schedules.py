"""Step-size, penalty, momentum and dual step sequences for each solver regime."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, NamedTuple, Optional

import numpy as np

from .errors import ConfigurationError, ParameterError
from .model import AssumptionConstants

MIN_PENALTY_BASE = 1.0 + 1e-6


class StepParams(NamedTuple):
    eta: float
    rho: float
    alpha: float


# --------------------------------------------------------------------------
# Linear-constraint augmented Lagrangian


@dataclass(frozen=True)
class Case1Schedule:
    """Parameters of the linearized augmented Lagrangian method.

    ``eta_k = eta_base / ((k + k0)^(1/3) ln(k + k0))`` and
    ``alpha_k = min(1, alpha_scale * eta_k^2)`` with a constant penalty.

    The ``*_override`` fields replace the analysed value of ``k0``,
    ``rho`` or ``eta_base``; with all three unset every derived constant
    follows the closed forms below.
    """

    lip_grad_f: float
    delta: float
    a_norm: float
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    c4: float = 1.0
    k0_override: Optional[float] = None
    rho_override: Optional[float] = None
    eta_override: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ("lip_grad_f", "delta", "a_norm", "c1", "c2", "c3", "c4"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ParameterError(f"{name} must be positive and finite, got {value}")
            object.__setattr__(self, name, float(value))
        for name in ("k0_override", "rho_override", "eta_override"):
            value = getattr(self, name)
            if value is not None:
                if not (value > 0 and math.isfinite(value)):
                    raise ParameterError(f"{name} must be positive and finite, got {value}")
                object.__setattr__(self, name, float(value))

    @cached_property
    def alpha_scale(self) -> float:
        return 121.0 * self.lip_grad_f**2

    @cached_property
    def m_const(self) -> float:
        L, c2, c3 = self.lip_grad_f, self.c2, self.c3
        return min(1.0 / (448.0 * L), 1.0 / (32.0 * (1 + c2 + c3) * L), 1.0 / (8.0 * (1 + 2 * c3) * L))

    @cached_property
    def rho(self) -> float:
        if self.rho_override is not None:
            return float(self.rho_override)
        L, d, c1, c4 = self.lip_grad_f, self.delta, self.c1, self.c4
        return max(
            7.0 * (1 + c1) / (self.m_const * d),
            4.0 * (6 + c4) * (1 + c1) * L / d,
            168.0 * (1 + c1) * L / d,
        )

    @cached_property
    def eta_base(self) -> float:
        if self.eta_override is not None:
            return float(self.eta_override)
        return 1.0 / (11.0 * (self.lip_grad_f + self.rho * self.a_norm**2))

    @cached_property
    def k0(self) -> float:
        if self.k0_override is not None:
            return float(self.k0_override)
        m, eta, L, c = self.m_const, self.eta_base, self.lip_grad_f, self.alpha_scale
        return max(
            (10.0 * m / (3.0 * self.c1 * eta)) ** 2,
            (20.0 / (3.0 * eta * self.c2 * L)) ** 2,
            (10.0 / (3.0 * self.c3 * L)) ** 2,
            400.0 / (3.0 * eta**2 * self.c4 * L**2),
            (20.0 / (c * eta**2)) ** 4,
            (50.0 / (3.0 * c * eta**2)) ** 6,
            2.0,
        )

    def inverse_eta(self, k: Any) -> Any:
        """``1/eta_k``; vectorizes over numpy arrays of ``k``."""
        t = np.asarray(k, dtype=np.float64) + self.k0
        return np.cbrt(t) * np.log(t) / self.eta_base

    def at(self, k: int) -> StepParams:
        t = k + self.k0
        if t <= 1.0:
            raise ParameterError(f"k + k0 = {t} leaves the step size undefined")
        eta = self.eta_base / (t ** (1.0 / 3.0) * math.log(t))
        return StepParams(eta, self.rho, min(1.0, self.alpha_scale * eta * eta))


def case1_at(sched: Case1Schedule, k: int) -> tuple[float, float, float]:
    """``(eta_k, alpha_k, rho)`` of the linear-constraint schedule."""
    if k < 0:
        raise ParameterError("k must be nonnegative")
    p = sched.at(k)
    return p.eta, p.alpha, p.rho


# --------------------------------------------------------------------------
# Penalty schedules


@dataclass(frozen=True)
class PenaltySchedule:
    """Polynomial schedule ``eta_k = 1/(9 L rho (k+1)^a)``, ``rho_k = rho k^b``,
    ``alpha_{k+1} = 72/(81 (k+1)^c)`` with exponents ``(a, b, c)``.

    ``rho_base`` below ``1 + 1e-6`` is raised to that value.
    """

    l_tilde: float
    rho_base: float = 2.0
    exponents: tuple[float, float, float] = field(default=(0.6, 0.2, 0.8), init=False)
    kind: str = field(default="penalty", init=False)

    def __post_init__(self) -> None:
        if not (self.l_tilde > 0 and math.isfinite(self.l_tilde)):
            raise ParameterError(f"l_tilde must be positive and finite, got {self.l_tilde}")
        object.__setattr__(self, "l_tilde", float(self.l_tilde))
        if not math.isfinite(self.rho_base):
            raise ParameterError("rho_base must be finite")
        object.__setattr__(self, "rho_base", max(MIN_PENALTY_BASE, float(self.rho_base)))

    def at(self, k: int) -> StepParams:
        """``(eta_k, rho_k, alpha_{k+1})``; ``k = 0`` gives ``rho_0 = 0``."""
        if k < 0:
            raise ParameterError("k must be nonnegative")
        a, b, c = self.exponents
        eta = 1.0 / (9.0 * self.l_tilde * self.rho_base * (k + 1) ** a)
        rho = self.rho_base * k**b
        alpha = 72.0 / (81.0 * (k + 1) ** c)
        return StepParams(eta, rho, alpha)


@dataclass(frozen=True)
class Case3Schedule(PenaltySchedule):
    exponents: tuple[float, float, float] = field(default=(0.6, 0.2, 0.8), init=False)
    kind: str = field(default="case3", init=False)


@dataclass(frozen=True)
class Case2DetSchedule(PenaltySchedule):
    exponents: tuple[float, float, float] = field(default=(0.5, 0.25, 0.5), init=False)
    kind: str = field(default="case2det", init=False)


def case3_at(sched: PenaltySchedule, k: int) -> tuple[float, float, float]:
    """``(eta_k, rho_k, alpha_{k+1})``."""
    return tuple(sched.at(k))  # type: ignore[return-value]


def case2det_at(sched: PenaltySchedule, k: int) -> tuple[float, float, float]:
    """``(eta_k, rho_k, alpha_{k+1})`` for deterministic constraints."""
    return tuple(sched.at(k))  # type: ignore[return-value]


@dataclass(frozen=True)
class DualSchedule:
    """Decaying dual step wrapped around a penalty schedule."""

    gamma: float
    base: PenaltySchedule

    def __post_init__(self) -> None:
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ParameterError(f"gamma must be positive and finite, got {self.gamma}")

    def increment_size(self, k: int) -> float:
        """``gamma / (k ln^2(k+1))``: the magnitude of each dual increment."""
        return self.gamma / (k * math.log(k + 1) ** 2)


def dual_gamma(sched: DualSchedule, k: int, c_tilde_i: float) -> float:
    """Dual step ``gamma / (k ln^2(k+1) |c_tilde_i|)``; zero when ``|c_tilde_i| <= 1e-14``."""
    if k < 1:
        raise ParameterError("k must be at least 1")
    size = abs(c_tilde_i)
    if size <= 1e-14:
        return 0.0
    return sched.increment_size(k) / size


@dataclass(frozen=True)
class FixedSchedule:
    """Constant ``(eta, rho, alpha)``; handy for reference loops and tests."""

    eta: float
    rho: float
    alpha: float = 1.0
    kind: str = field(default="fixed", init=False)

    def at(self, k: int) -> StepParams:
        return StepParams(self.eta, self.rho, self.alpha)


# --------------------------------------------------------------------------
# Derived constants


def l_tilde(constants: AssumptionConstants, m: int, regime: str, lambda1: Any = None) -> float:
    """Smoothness constant of the sampled penalty gradient for ``regime``.

    ``regime`` is ``"case3"``, ``"case2det"`` or ``"dual"``; the dual form
    needs the initial multiplier ``lambda1``.
    """
    lf, lgc, lc, cc, cgc = constants.require(
        "lip_grad_f_sample", "lip_grad_c_sample", "lip_c_sample", "bound_c_sample", "bound_grad_c_sample"
    )
    cross = cc**2 * lgc**2 + cgc**2 * lc**2
    if regime in ("case3", "case2det"):
        return math.sqrt(4.0 * lf**2 + 4.0 * m**2 * cross)
    if regime == "dual":
        lam_norm = 0.0 if lambda1 is None else float(np.linalg.norm(lambda1))
        return math.sqrt(0.75 * lf**2 + 0.75 * m**2 * (lam_norm + 4.0) ** 2 * lgc**2 + 1.5 * m**2 * cross)
    raise ConfigurationError(f"unknown regime {regime!r}")


# --------------------------------------------------------------------------
# Verification of the step-size inequalities


@dataclass(frozen=True)
class InequalityCheck:
    name: str
    passed: bool
    first_violation: Optional[int]
    worst_ratio: float


@dataclass(frozen=True)
class ScheduleReport:
    checks: tuple[InequalityCheck, ...]
    k_max: int
    n_points: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def first_violation(self) -> Optional[tuple[str, int]]:
        hits = [(c.first_violation, c.name) for c in self.checks if not c.passed]
        if not hits:
            return None
        k, name = min(hits)
        return name, k


def _inverse_eta_increment(sched: Case1Schedule, k: np.ndarray) -> np.ndarray:
    """``1/eta_{k+1} - 1/eta_k`` without cancellation, even when ``k0`` dwarfs ``k``."""
    t = k + sched.k0
    u = 1.0 / t
    lu = np.log1p(u)
    e = np.expm1(lu / 3.0)
    return np.cbrt(t) * (e * np.log(t) + (1.0 + e) * lu) / sched.eta_base


def sample_indices(k_max: int, max_points: int = 10_000) -> np.ndarray:
    """Every small index plus a log-spaced sample up to ``k_max``."""
    dense = np.arange(1, min(k_max, 200) + 1)
    sparse = np.unique(np.round(np.geomspace(1, k_max, max_points - dense.size)).astype(np.int64))
    return np.union1d(dense, sparse)[:max_points].astype(np.float64)


def validate_case1(sched: Case1Schedule, k_max: int, rel_tol: float = 1e-12) -> ScheduleReport:
    """Check the six step-size inequalities the linear-constraint analysis uses.

    A violation is recorded when the left side exceeds the right side by more
    than ``rel_tol`` in relative terms.
    """
    if k_max < 2:
        raise ParameterError("k_max must be at least 2")
    k = sample_indices(k_max)
    L, c = sched.lip_grad_f, sched.alpha_scale
    inv_k = sched.inverse_eta(k)
    inv_k1 = sched.inverse_eta(k + 1)
    inv_k2 = sched.inverse_eta(k + 2)
    step = _inverse_eta_increment(sched, k)
    step_next = _inverse_eta_increment(sched, k + 1)

    pairs = {
        "dual_step_ratio": (step_next / (2.0 * sched.rho), np.full_like(k, sched.c1 / (sched.rho * sched.m_const))),
        "inverse_square_growth": (step * (inv_k1 + inv_k) / 2.0, sched.c2 * L * inv_k1),
        "weighted_increment": (step * inv_k1 / 2.0, sched.c3 * L * inv_k1),
        "squared_increment": (3.0 * step**2, np.full_like(k, sched.c4 * L**2)),
        "increment_vs_momentum": (step, c / (2.0 * inv_k1)),
        "step_halving": (inv_k2, 2.0 * inv_k1),
    }
    checks = []
    for name, (lhs, rhs) in pairs.items():
        bad = lhs > rhs * (1.0 + rel_tol)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(rhs > 0, lhs / rhs, np.inf)
        first = int(k[np.argmax(bad)]) if bad.any() else None
        checks.append(InequalityCheck(name, not bad.any(), first, float(np.max(ratio))))
    return ScheduleReport(tuple(checks), int(k_max), int(k.size))
