"""Experiment configs, multi-seed runs, CSV/JSONL output and rate fitting."""

from __future__ import annotations

import csv
import glob as globmod
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError, InputError
from .model import LinearConstraints, ProblemSpec
from .problems import problem_from_dict
from .schedules import (
    Case1Schedule,
    Case2DetSchedule,
    Case3Schedule,
    DualSchedule,
    PenaltySchedule,
    l_tilde,
)
from .solvers import SOLVER_KINDS, TRACE_FIELDS, RunConfig, RunReport, TraceRow, run

THREADS_ENV = "PENALTY_STORM_THREADS"
CONFIG_KEYS = {"problem", "solver", "schedule", "K", "seeds", "stride", "outdir", "potential", "timing", "x0"}


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict
    solver: str
    schedule: dict
    K: int
    seeds: tuple[int, ...]
    stride: int = 1
    outdir: str = "runs"
    potential: bool = False
    timing: bool = False
    x0: Optional[tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.solver not in SOLVER_KINDS:
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        if not self.seeds:
            raise ConfigurationError("seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be distinct")
        if self.K < 10:
            raise ConfigurationError("K must be at least 10")
        if self.stride < 1:
            raise ConfigurationError("stride must be at least 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - CONFIG_KEYS
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        missing = {"problem", "solver", "schedule", "K", "seeds"} - set(doc)
        if missing:
            raise ConfigurationError(f"config lacks keys: {sorted(missing)}")
        return cls(
            problem=doc["problem"],
            solver=doc["solver"],
            schedule=doc["schedule"],
            K=int(doc["K"]),
            seeds=tuple(int(s) for s in doc["seeds"]),
            stride=int(doc.get("stride", 1)),
            outdir=str(doc.get("outdir", "runs")),
            potential=bool(doc.get("potential", False)),
            timing=bool(doc.get("timing", False)),
            x0=None if doc.get("x0") is None else tuple(float(v) for v in doc["x0"]),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        doc = {
            "problem": self.problem,
            "solver": self.solver,
            "schedule": self.schedule,
            "K": self.K,
            "seeds": list(self.seeds),
            "stride": self.stride,
            "outdir": self.outdir,
            "potential": self.potential,
            "timing": self.timing,
        }
        if self.x0 is not None:
            doc["x0"] = list(self.x0)
        return doc


# --------------------------------------------------------------------------
# Schedules from config


SCHEDULE_KEYS = {"kind", "c1", "c2", "c3", "c4", "k0", "rho", "eta", "l_tilde", "gamma", "lambda0"}


def build_schedule(problem: ProblemSpec, solver: str, doc: dict) -> tuple[Any, Optional[DualSchedule], Optional[float]]:
    """Schedule, optional dual schedule and the smoothness constant used."""
    unknown = set(doc) - SCHEDULE_KEYS
    if unknown:
        raise ConfigurationError(f"unknown schedule keys: {sorted(unknown)}")
    kind = doc.get("kind")
    if kind == "case1":
        cons = problem.constraints
        if not isinstance(cons, LinearConstraints):
            raise ConfigurationError("the case1 schedule needs linear constraints")
        (lip,) = problem.constants.require("lip_grad_f")
        sched = Case1Schedule(
            lip,
            cons.delta,
            float(np.linalg.norm(cons.A, 2)),
            c1=float(doc.get("c1", 1.0)),
            c2=float(doc.get("c2", 1.0)),
            c3=float(doc.get("c3", 1.0)),
            c4=float(doc.get("c4", 1.0)),
            k0_override=doc.get("k0"),
            rho_override=doc.get("rho"),
            eta_override=doc.get("eta"),
        )
        return sched, None, None
    if kind not in ("case3", "case2det"):
        raise ConfigurationError(f"unknown schedule kind {kind!r}")
    lambda0 = doc.get("lambda0")
    regime = "dual" if solver == "StochAlm" else kind
    lt = doc.get("l_tilde")
    lt = float(lt) if lt is not None else l_tilde(problem.constants, problem.m, regime, lambda0)
    cls = Case3Schedule if kind == "case3" else Case2DetSchedule
    sched: PenaltySchedule = cls(lt, float(doc.get("rho", 2.0)))
    dual = None
    if solver == "StochAlm":
        if "gamma" not in doc:
            raise ConfigurationError("StochAlm needs schedule.gamma")
        dual = DualSchedule(float(doc["gamma"]), sched)
    return sched, dual, lt


def run_config(config: ExperimentConfig, seed: int, problem: Optional[ProblemSpec] = None) -> RunReport:
    problem = problem_from_dict(config.problem) if problem is None else problem
    sched, dual, lt = build_schedule(problem, config.solver, config.schedule)
    lambda0 = config.schedule.get("lambda0")
    rc = RunConfig(
        solver=config.solver,
        schedule=sched,
        K=config.K,
        seed=seed,
        stride=config.stride,
        dual=dual,
        potential=config.potential,
        timing=config.timing,
        x0=None if config.x0 is None else np.asarray(config.x0),
        lambda0=None if lambda0 is None else np.asarray(lambda0, dtype=np.float64),
        l_tilde=lt,
    )
    return run(problem, rc)


# --------------------------------------------------------------------------
# Output


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def write_trace(path: Union[str, Path], rows: Iterable[TraceRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)
        for row in rows:
            writer.writerow([_fmt(v) for v in row.values()])


def read_trace(path: Union[str, Path]) -> dict[str, np.ndarray]:
    """Columns of a trace CSV as float arrays (empty cells become NaN)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(v) if v != "" else math.nan for v in line] for line in reader]
    arr = np.array(data, dtype=np.float64).reshape(-1, len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}


def trace_path(outdir: Union[str, Path], seed: int) -> Path:
    return Path(outdir) / f"trace_seed{seed}.csv"


def _run_record(seed: int, report: RunReport) -> dict:
    last = report.rows[-1]
    return {
        "type": "run",
        "seed": seed,
        "selected_index": report.selected_index,
        "cone_dist": _json_num(report.selected_cone_dist),
        "feas": _json_num(report.selected_feas),
        "final_k": last.k,
        "final_feas": _json_num(last.feas),
        "final_cone_dist": _json_num(last.cone_dist),
        "aborted": report.aborted,
        "abort_reason": report.abort_reason,
        "potential_floor_violated": report.potential_floor_violated,
    }


def _json_num(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


def _median(values: Sequence[Optional[float]]) -> Optional[float]:
    finite = [v for v in values if v is not None]
    return float(np.median(finite)) if finite else None


def aggregate_record(records: Sequence[dict]) -> dict:
    return {
        "type": "aggregate",
        "n_runs": len(records),
        "n_aborted": sum(1 for r in records if r["aborted"]),
        "median_cone_dist": _median([r["cone_dist"] for r in records]),
        "median_feas": _median([r["feas"] for r in records]),
        "median_final_feas": _median([r["final_feas"] for r in records]),
        "median_final_cone_dist": _median([r["final_cone_dist"] for r in records]),
    }


@dataclass
class ExperimentResult:
    traces: list[Path]
    summary: Path
    records: list[dict]
    aggregate: dict
    reports: dict[int, RunReport] = field(default_factory=dict, repr=False)

    @property
    def exit_code(self) -> int:
        return 1 if self.aggregate["n_aborted"] else 0


def _seed_job(config_doc: dict, seed: int) -> tuple[int, RunReport]:
    config = ExperimentConfig.from_dict(config_doc)
    report = run_config(config, seed)
    report.final_state = None
    write_trace(trace_path(config.outdir, seed), report.rows)
    return seed, report


def worker_count(n_jobs: int) -> int:
    raw = os.environ.get(THREADS_ENV)
    limit = os.cpu_count() or 1
    if raw:
        try:
            limit = max(1, int(raw))
        except ValueError as exc:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, min(limit, n_jobs))


def run_experiment(config: Union[ExperimentConfig, dict, str, Path]) -> ExperimentResult:
    """Run every seed, write one trace CSV per seed and a JSONL summary.

    Seeds run in separate processes when more than one worker is allowed;
    each worker writes only its own trace file.
    """
    if isinstance(config, (str, Path)):
        config = ExperimentConfig.load(config)
    elif isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    doc = config.to_dict()
    workers = worker_count(len(config.seeds))
    reports: dict[int, RunReport] = {}
    if workers == 1:
        problem = problem_from_dict(config.problem)
        for seed in config.seeds:
            report = run_config(config, seed, problem)
            write_trace(trace_path(outdir, seed), report.rows)
            reports[seed] = report
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, report in pool.map(_seed_job, [doc] * len(config.seeds), config.seeds):
                reports[seed] = report
    records = [_run_record(seed, reports[seed]) for seed in config.seeds]
    aggregate = aggregate_record(records)
    summary = outdir / "summary.jsonl"
    with open(summary, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records + [aggregate]:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    traces = [trace_path(outdir, s) for s in config.seeds]
    return ExperimentResult(traces, summary, records, aggregate, reports)


# --------------------------------------------------------------------------
# Rate fitting


_TERM = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\^\s*([0-9.]+))?\s*$")


def column_values(columns: dict[str, np.ndarray], expression: str) -> np.ndarray:
    """Evaluate a sum of (optionally powered) columns, e.g. ``"cone_dist^2+feas^2"``."""
    total = None
    for term in expression.split("+"):
        match = _TERM.match(term)
        if not match:
            raise InputError(f"cannot parse column term {term!r}")
        name, power = match.group(1), match.group(2)
        if name not in columns:
            raise InputError(f"trace has no column {name!r}")
        values = columns[name] ** float(power) if power else columns[name]
        total = values if total is None else total + values
    return total


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    n_points: int

    def __iter__(self):
        return iter((self.slope, self.intercept, self.r2))


def fit_power_law(k: np.ndarray, y: np.ndarray, k_range: Optional[tuple[float, float]] = None,
                  min_points: int = 8) -> RateFit:
    """Least squares of ``ln y`` on ``ln k``; nonpositive or non-finite ``y`` are skipped."""
    k = np.asarray(k, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = np.isfinite(y) & (y > 0) & (k > 0)
    if k_range is not None:
        keep &= (k >= k_range[0]) & (k <= k_range[1])
    if keep.sum() < min_points:
        raise InputError(f"only {int(keep.sum())} usable rows for the fit; need {min_points}")
    lx, ly = np.log(k[keep]), np.log(y[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    spread = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / spread if spread > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, int(keep.sum()))


def running_average(values: np.ndarray) -> np.ndarray:
    return np.cumsum(values) / np.arange(1, values.size + 1)


def seed_curve(columns: dict[str, np.ndarray], column: str, running: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``(k, value)`` for rows with ``k >= 1``, running-averaged unless ``running`` is False."""
    k = columns["k"]
    values = column_values(columns, column)
    mask = (k >= 1) & np.isfinite(values)
    k, values = k[mask], values[mask]
    return k, running_average(values) if running else values


def fit_rate(
    csv_files: Union[str, Sequence[Union[str, Path]]],
    column: str,
    k_range: Optional[tuple[float, float]] = None,
    running: bool = True,
) -> RateFit:
    """Fit the decay exponent of ``column`` across one or more traces.

    Each trace gives a running average over its rows with ``k >= 1`` (or the
    raw values when ``running`` is False); curves are averaged across traces
    on their common ``k`` grid, and ``ln`` of the result is regressed on
    ``ln k`` within ``k_range``.
    """
    if isinstance(csv_files, (str, Path)):
        files = sorted(globmod.glob(str(csv_files)))
    else:
        files = [str(f) for f in csv_files]
    if not files:
        raise InputError("no trace files to fit")
    curves = [seed_curve(read_trace(f), column, running) for f in files]
    common = curves[0][0]
    for k, _ in curves[1:]:
        common = np.intersect1d(common, k)
    stacked = np.array([vals[np.isin(k, common)] for k, vals in curves])
    return fit_power_law(common, stacked.mean(axis=0), k_range)
