"""Command-line entry point: ``penalty-storm run|fit|validate-schedule|list-problems``."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .errors import ConfigurationError
from .harness import ExperimentConfig, build_schedule, fit_rate, run_experiment
from .problems import BUILTINS, problem_from_dict
from .schedules import Case1Schedule, validate_case1


def _cmd_run(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    if args.outdir:
        config = ExperimentConfig.from_dict({**config.to_dict(), "outdir": args.outdir})
    result = run_experiment(config)
    print(json.dumps(result.aggregate, sort_keys=True))
    for rec in result.records:
        if rec["aborted"]:
            print(f"seed {rec['seed']} aborted: {rec['abort_reason']}", file=sys.stderr)
    return result.exit_code


def _cmd_fit(args: argparse.Namespace) -> int:
    k_range = None
    if args.kmin is not None or args.kmax is not None:
        k_range = (args.kmin if args.kmin is not None else 0.0, args.kmax if args.kmax is not None else float("inf"))
    fit = fit_rate(args.pattern, args.column, k_range, running=not args.raw)
    print(json.dumps({"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2, "n_points": fit.n_points}))
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    problem = problem_from_dict(config.problem)
    sched, _, _ = build_schedule(problem, config.solver, config.schedule)
    if not isinstance(sched, Case1Schedule):
        raise ConfigurationError("validate-schedule checks case1 schedules only")
    report = validate_case1(sched, args.kmax)
    for check in report.checks:
        status = "ok" if check.passed else f"FAIL at k={check.first_violation}"
        print(f"{check.name:24s} {status}  worst ratio {check.worst_ratio:.6g}")
    return 0 if report.passed else 1


def _cmd_list(args: argparse.Namespace) -> int:
    for name, builder in sorted(BUILTINS.items()):
        doc = (builder.__doc__ or "").strip().splitlines()
        print(f"{name:14s} {doc[0] if doc else ''}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="penalty-storm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every seed of an experiment config")
    p.add_argument("config")
    p.add_argument("--outdir", help="override the config's output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("fit", help="fit a decay exponent to trace CSVs")
    p.add_argument("pattern", help="glob of trace CSV files")
    p.add_argument("--column", required=True, help='column expression, e.g. "cone_dist^2+feas^2"')
    p.add_argument("--kmin", type=float)
    p.add_argument("--kmax", type=float)
    p.add_argument("--raw", action="store_true", help="fit the per-row values instead of running averages")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("validate-schedule", help="check the case1 schedule inequalities")
    p.add_argument("config")
    p.add_argument("--kmax", type=int, default=1_000_000)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("list-problems", help="list built-in problems")
    p.set_defaults(func=_cmd_list)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
