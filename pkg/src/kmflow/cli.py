"""Command-line entry point: kmflow run / kmflow verify."""

from __future__ import annotations

import argparse
import os
import sys


def _apply_thread_cap(threads):
    """Cap BLAS/OpenMP pools; effective because numpy is imported afterwards."""
    if threads is None:
        threads = os.environ.get("KMFLOW_THREADS")
    if threads is None:
        return
    value = str(int(threads))
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(var, value)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kmflow",
        description="Graph flow toward optimal transport maps on periodic domains",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute the scenario described by a config file")
    run.add_argument("config", help="TOML run configuration")
    run.add_argument("--out", default=None, help="output directory (default from config)")
    run.add_argument("--threads", type=int, default=None, help="cap worker/BLAS threads")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")

    verify = sub.add_parser("verify", help="validate a config file without running it")
    verify.add_argument("config", help="TOML run configuration")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "run":
        _apply_thread_cap(args.threads)

    from .config import parse_config
    from .errors import ParseError, ValidationError

    try:
        config = parse_config(args.config)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print("config validation failed:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return 1

    if args.command == "verify":
        print(f"{args.config}: valid ({config.scenario} scenario)")
        return 0

    from .runner import run_scenario

    status = run_scenario(config, out_dir=args.out, seed=args.seed)
    if status == 2:
        print("run completed with property violations (see report.json)", file=sys.stderr)
    elif status == 1:
        print("run failed (see report.json)", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
