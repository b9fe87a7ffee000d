"""Measurements shared by the acceptance and supplementary tests."""

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from penalty_storm.harness import ExperimentConfig, build_schedule, fit_power_law, read_trace, run_experiment, seed_curve
from penalty_storm.metrics import case1_allowance_rate
from penalty_storm.problems import problem_from_dict

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def load_config(name):
    return json.loads((CONFIGS / f"{name}.json").read_text())


def timed_run(doc):
    start = time.perf_counter()
    result = run_experiment(doc)
    return result, time.perf_counter() - start


def per_seed_slopes(result, column, k_range=(1e3, 1e5)):
    slopes = []
    for path in result.traces:
        k, avg = seed_curve(read_trace(path), column)
        slopes.append(fit_power_law(k, avg, k_range).slope)
    return slopes


def selected_output_ratios(long, short):
    """Median selected-output readings of ``long`` divided by those of ``short``."""
    return {
        key: float(np.median([r[key] for r in long.records]) / np.median([r[key] for r in short.records]))
        for key in ("cone_dist", "feas")
    }


@dataclass
class PotentialCheck:
    held: int
    resolved: int
    pairs: int
    magnitude: float

    @property
    def share(self):
        return self.held / self.pairs

    def describe(self):
        return (f"{self.held}/{self.pairs} recorded steps within allowance + 3 SE, "
                f"{self.resolved}/{self.pairs} with a nonzero seed-mean change, |mean Y| ~ {self.magnitude:.3g}")


def potential_check(result, config_doc):
    """Compare seed-mean potential changes between recorded rows with the summed allowance."""
    config = ExperimentConfig.from_dict(config_doc)
    problem = problem_from_dict(config.problem)
    sched, _, _ = build_schedule(problem, config.solver, config.schedule)
    noise_sq = problem.constants.noise_grad_f ** 2
    traces = [read_trace(p) for p in result.traces]
    k = traces[0]["k"].astype(int)
    Y = np.array([t["potential_Y"] for t in traces])
    rows = [i for i in range(len(k)) if not np.isnan(Y[:, i]).any()]
    pairs = list(zip(rows[:-1], rows[1:]))
    held = resolved = 0
    for a, b in pairs:
        # Going from Y_t to Y_{t+1} is allowed v_t V^2, so a gap sums v_t over [k_a, k_b).
        allowance = noise_sq * float(np.sum(case1_allowance_rate(sched, np.arange(k[a], k[b]))))
        diff = Y[:, b] - Y[:, a]
        se = diff.std(ddof=1) / math.sqrt(diff.size)
        held += bool(diff.mean() <= allowance + 3 * se)
        resolved += bool(diff.mean() != 0.0)
    return PotentialCheck(held, resolved, len(pairs), float(np.abs(Y[:, rows].mean(axis=0)).max()))
