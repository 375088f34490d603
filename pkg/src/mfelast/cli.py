"""Command-line benchmark harness.

Subcommands: ``vmult`` (matrix-vector throughput), ``flops`` (per-point
operation census), ``memory`` (storage per DoF), ``solve`` (time to
solution), ``report`` (re-render figures from an existing CSV).

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(equivalence guard violation or solver divergence).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import bench, report
from .bench import BenchConfig, ConfigError, NumericalFailure
from .materials import Model, NonPositiveJacobian
from .solvers import NewtonDiverged


def _parse_int_list(text):
    return tuple(int(tok) for tok in str(text).split(",") if tok != "")


def _add_common(parser):
    parser.add_argument("--model", default="compressible",
                        choices=[m.value for m in Model])
    parser.add_argument("--dim", type=int, default=2)
    parser.add_argument("--degree", default="1,2,3",
                        help="comma-separated polynomial degrees")
    parser.add_argument("--refine", default="2",
                        help="refinements; one value or one per degree")
    parser.add_argument("--strategy", default="store,recompute,sparse",
                        help="comma-separated subset of "
                             "naive,recompute,store,sparse")
    parser.add_argument("--n0", type=int, default=4,
                        help="coarse cells per direction")
    parser.add_argument("--reps", type=int, default=10)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--load-steps", type=int, default=5, dest="load_steps")
    parser.add_argument("--out", default="bench-out",
                        help="output directory for CSV and figures")
    parser.add_argument("--config", default=None,
                        help="JSON file whose entries override the flags")


def _apply_config_file(args):
    if args.config is None:
        return args
    with open(args.config) as fh:
        overrides = json.load(fh)
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ConfigError(f"unknown config key '{key}'")
        setattr(args, attr, value)
    return args


def _as_int(value, name):
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be an integer, got {value!r}") from exc


def _build_config(args):
    try:
        degrees = _parse_int_list(args.degree)
        refines = _parse_int_list(args.refine)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return BenchConfig(
        model=Model(args.model),
        strategies=bench.strategies_from_tokens(
            str(args.strategy).split(",")),
        dim=_as_int(args.dim, "dim"),
        degrees=degrees,
        refines=refines,
        n0=_as_int(args.n0, "n0"),
        reps=_as_int(args.reps, "reps"),
        workers=_as_int(args.workers, "workers"),
        load_steps=_as_int(args.load_steps, "load-steps"),
    ).validate()


_RUNNERS = {
    "vmult": bench.run_vmult_bench,
    "flops": bench.run_flop_census,
    "memory": bench.run_memory_census,
    "solve": bench.run_time_to_solution,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mfelast",
        description="matrix-free hyperelasticity benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("vmult", "time repeated tangent applications"),
            ("flops", "count quadrature-loop operations per point"),
            ("memory", "account operator storage per DoF"),
            ("solve", "run full incremental Newton solves")):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
    rep = sub.add_parser("report", help="render figures from an existing CSV")
    rep.add_argument("--from", dest="source", required=True,
                     help="records CSV produced by another subcommand")
    rep.add_argument("--out", default="bench-out")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            records = report.read_csv(args.source)
            written = report.emit_report(records, args.out)
        else:
            args = _apply_config_file(args)
            cfg = _build_config(args)
            records = _RUNNERS[args.command](cfg)
            written = report.emit_report(records, args.out,
                                         csv_name=f"{args.command}.csv")
        for path in written:
            print(path)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, NewtonDiverged, NonPositiveJacobian) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
