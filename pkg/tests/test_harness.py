import json
import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from penalty_storm.errors import ConfigurationError, InputError
from penalty_storm.harness import (
    THREADS_ENV,
    ExperimentConfig,
    aggregate_record,
    build_schedule,
    column_values,
    fit_power_law,
    fit_rate,
    read_trace,
    run_experiment,
    worker_count,
    write_trace,
)
from penalty_storm.problems import make_builtin
from penalty_storm.schedules import Case1Schedule, Case2DetSchedule, Case3Schedule
from penalty_storm.solvers import TRACE_FIELDS, TraceRow

SMALL_SHARING = {"builtin": "sharing", "params": {"d": 4, "m": 2, "n": 6, "n_samples": 20}}
TAME = {"kind": "case1", "k0": 2.0, "rho": 2.0, "eta": 0.05}


def config(tmp_path, **kw):
    doc = {"problem": SMALL_SHARING, "solver": "LinAlm", "schedule": TAME, "K": 100, "seeds": [0],
           "stride": 10, "outdir": str(tmp_path / "out")}
    doc.update(kw)
    return doc


# -- config ---------------------------------------------------------------------


def test_config_validation(tmp_path):
    base = config(tmp_path)
    for bad in ({"seeds": []}, {"seeds": [1, 1]}, {"K": 9}, {"stride": 0}, {"solver": "SGD"}):
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict({**base, **bad})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({**base, "colour": "red"})
    doc = dict(base)
    del doc["schedule"]
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(doc)


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict(config(tmp_path, x0=[0.1, 0.2, 0.3, 0.4]))
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path) == cfg


def test_build_schedule_kinds():
    sharing = make_builtin("sharing", d=4, m=2, n=6, n_samples=20)
    sched, dual, lt = build_schedule(sharing, "LinAlm", {"kind": "case1"})
    assert isinstance(sched, Case1Schedule) and dual is None and lt is None
    assert sched.lip_grad_f == sharing.constants.lip_grad_f and sched.delta == sharing.constraints.delta
    sphere = make_builtin("stoch_sphere", d=3, n_samples=10)
    sched, dual, lt = build_schedule(sphere, "StochQP", {"kind": "case3", "l_tilde": 4.0, "rho": 3.0})
    assert isinstance(sched, Case3Schedule) and (sched.l_tilde, lt) == (4.0, 4.0) and dual is None
    sched, dual, _ = build_schedule(sphere, "StochAlm", {"kind": "case2det", "gamma": 0.5})
    assert isinstance(sched, Case2DetSchedule) and dual.gamma == 0.5
    with pytest.raises(ConfigurationError):
        build_schedule(sphere, "StochAlm", {"kind": "case3"})
    with pytest.raises(ConfigurationError):
        build_schedule(sphere, "StochQP", {"kind": "case1"})
    with pytest.raises(ConfigurationError):
        build_schedule(sphere, "StochQP", {"kind": "case9"})
    with pytest.raises(ConfigurationError):
        build_schedule(sphere, "StochQP", {"kind": "case3", "tempo": 1})


def test_worker_count(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert worker_count(10) == 3 and worker_count(2) == 2
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigurationError):
        worker_count(4)
    monkeypatch.delenv(THREADS_ENV)
    assert worker_count(1) == 1


# -- experiment output --------------------------------------------------------


def test_stride_rows_and_header(tmp_path):
    result = run_experiment(config(tmp_path))
    lines = result.traces[0].read_text().splitlines()
    assert lines[0] == ",".join(TRACE_FIELDS)
    assert TRACE_FIELDS[:3] == ("k", "eta_k", "rho_k") and TRACE_FIELDS[-1] == "wall_nanos"
    cols = read_trace(result.traces[0])
    assert cols["k"].tolist() == list(range(0, 101, 10))
    assert "\r" not in result.traces[0].read_bytes().decode()
    assert result.exit_code == 0


def test_summary_records(tmp_path, monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "1")
    result = run_experiment(config(tmp_path, seeds=[0, 1, 2, 3, 4]))
    lines = [json.loads(line) for line in result.summary.read_text().splitlines()]
    assert [r["type"] for r in lines] == ["run"] * 5 + ["aggregate"]
    assert [r["seed"] for r in lines[:5]] == [0, 1, 2, 3, 4]
    agg = lines[-1]
    assert agg["n_runs"] == 5 and agg["n_aborted"] == 0
    assert agg["median_feas"] == pytest.approx(float(np.median([r["feas"] for r in lines[:5]])))
    for rec in lines[:5]:
        assert 1 <= rec["selected_index"] <= 100


def test_rerun_is_byte_identical_and_parallel_matches_serial(tmp_path, monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "1")
    a = run_experiment(config(tmp_path, seeds=[3, 4], outdir=str(tmp_path / "a")))
    b = run_experiment(config(tmp_path, seeds=[3, 4], outdir=str(tmp_path / "b")))
    monkeypatch.setenv(THREADS_ENV, "2")
    c = run_experiment(config(tmp_path, seeds=[3, 4], outdir=str(tmp_path / "c")))
    for pa, pb, pc in zip(a.traces, b.traces, c.traces):
        assert pa.read_bytes() == pb.read_bytes() == pc.read_bytes()
    assert a.summary.read_bytes() == c.summary.read_bytes()


def test_aborted_seed_sets_exit_code(tmp_path):
    sched = {"kind": "case1", "k0": 2.0, "rho": 1.0, "eta": 1e4}
    with np.errstate(all="ignore"):
        result = run_experiment(config(tmp_path, schedule=sched, K=300))
    assert result.exit_code == 1
    assert result.records[0]["aborted"] and result.aggregate["n_aborted"] == 1
    cols = read_trace(result.traces[0])
    assert math.isnan(cols["feas"][-1])


def test_empty_optional_cells_read_as_nan(tmp_path):
    result = run_experiment(config(tmp_path))
    cols = read_trace(result.traces[0])
    assert np.all(np.isnan(cols["potential_Y"]))
    assert np.all(cols["wall_nanos"] == 0)


@given(perm=st.permutations(range(6)))
def test_aggregate_is_permutation_invariant(perm):
    rng = random.Random(1)
    records = [
        {"aborted": i == 2, "cone_dist": rng.random(), "feas": rng.random(), "final_feas": rng.random(),
         "final_cone_dist": None if i == 4 else rng.random()}
        for i in range(6)
    ]
    assert aggregate_record([records[i] for i in perm]) == aggregate_record(records)


# -- fitting -------------------------------------------------------------------


def synthetic_trace(path, k, y, column="feas"):
    rows = []
    for kk, yy in zip(k, y):
        values = {name: 0.0 for name in TRACE_FIELDS}
        values.update(k=int(kk), potential_Y=None, allowance=None, objective=None, wall_nanos=0)
        values[column] = float(yy)
        rows.append(TraceRow(**values))
    write_trace(path, rows)
    return path


def test_fit_exact_power_law(tmp_path):
    k = np.arange(1, 2001)
    path = synthetic_trace(tmp_path / "t.csv", k, k ** (-2 / 3))
    fit = fit_rate([path], "feas", running=False)
    assert fit.slope == pytest.approx(-2 / 3, abs=1e-6) and fit.r2 == pytest.approx(1.0)


def test_fit_log_factor_flattens(tmp_path):
    k = np.unique(np.geomspace(1e3, 1e5, 400).astype(int))
    path = synthetic_trace(tmp_path / "t.csv", k, np.log(k + 1) / k**0.4)
    slope, _, _ = fit_rate([path], "feas", (1e3, 1e5), running=False)
    assert -0.40 < slope < -0.28


def test_fit_constant_column(tmp_path):
    k = np.arange(0, 500)
    path = synthetic_trace(tmp_path / "t.csv", k, np.full(k.size, 3.5))
    assert abs(fit_rate(str(tmp_path / "*.csv"), "feas").slope) < 1e-9
    assert abs(fit_rate([path], "feas", running=False).slope) < 1e-9


def test_running_average_of_power_law(tmp_path):
    # Running mean of k^-p over every k behaves like k^-p / (1 - p) for large k.
    k = np.arange(1, 100_001)
    path = synthetic_trace(tmp_path / "t.csv", k, k ** (-0.5))
    assert fit_rate([path], "feas", (1e4, 1e5)).slope == pytest.approx(-0.5, abs=0.01)


def test_fit_averages_seeds_on_common_grid(tmp_path):
    k = np.arange(1, 101)
    a = synthetic_trace(tmp_path / "a.csv", k, 2.0 * k**-1.0)
    b = synthetic_trace(tmp_path / "b.csv", k, 4.0 * k**-1.0)
    fit = fit_rate([a, b], "feas", running=False)
    assert fit.slope == pytest.approx(-1.0, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)


def test_fit_needs_eight_rows(tmp_path):
    k = np.arange(1, 8)
    path = synthetic_trace(tmp_path / "t.csv", k, 1.0 / k)
    with pytest.raises(InputError):
        fit_rate([path], "feas", running=False)
    with pytest.raises(InputError):
        fit_rate(str(tmp_path / "none*.csv"), "feas")
    # Nonpositive rows are skipped, so they do not count toward the minimum.
    y = np.where(np.arange(12) < 5, 0.0, 1.0)
    with pytest.raises(InputError):
        fit_power_law(np.arange(1, 13), y)


def test_column_expressions():
    cols = {"a": np.array([1.0, 2.0]), "b": np.array([3.0, 4.0])}
    np.testing.assert_array_equal(column_values(cols, "a^2 + b^2"), [10.0, 20.0])
    np.testing.assert_array_equal(column_values(cols, "b"), [3.0, 4.0])
    with pytest.raises(InputError):
        column_values(cols, "c")
    with pytest.raises(InputError):
        column_values(cols, "a*b")
