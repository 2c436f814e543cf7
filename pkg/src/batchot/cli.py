"""Command-line experiment runner.

Usage: batchot <experiment> [--config PATH] [--seed S] [--out DIR] [--threads T]

Exit codes: 0 success, 2 validation/config error, 3 solver convergence error.
BATCHOT_OUT and BATCHOT_THREADS override the output directory and thread
count (and nothing else).
"""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, resolve_config
from .experiments import run_experiment
from .measures import ValidationError
from .semidiscrete import ConvergenceError


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="batchot",
        description="Reproduce batch-OT coupling and flow experiments as CSV data.",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", help="INI-style config file; section [experiment]")
    parser.add_argument("--seed", type=int, help="override master_seed")
    parser.add_argument("--out", help="output directory (default: out)")
    parser.add_argument("--threads", type=int, help="worker thread count")
    args = parser.parse_args(argv)

    try:
        cfg = resolve_config(args.experiment, args.config, args.seed,
                             args.out, args.threads)
        out = run_experiment(cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return 3
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
