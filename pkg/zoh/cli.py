"""Command line entry point: ``zoh run``, ``zoh diag`` and ``zoh compare``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from .bench import EXIT_CONFIG, EXIT_OK, compare_report, run_diagnostics, run_experiment
from .errors import ConfigError
from .log import configure_logging


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zoh", description="Zeroth-order hybrid gradient descent benchmarks")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run seeded trials of every configured method")
    run.add_argument("config", type=Path)
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--out", type=Path, default=None, help="output directory (overrides output_dir)")
    run.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    diag = sub.add_parser("diag", help="check the estimator bounds on a config grid")
    diag.add_argument("config", type=Path)
    diag.add_argument("--jobs", type=int, default=1)
    diag.add_argument("--out", type=Path, default=None)
    diag.add_argument("--lipschitz-scale", type=float, default=None, help="multiply L fed to the bounds")

    compare = sub.add_parser("compare", help="aggregate summary files into one table")
    compare.add_argument("summaries", nargs="+", type=Path)
    compare.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    compare.add_argument("--out", type=Path, default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    if getattr(args, "jobs", 1) < 1:
        print("❌ --jobs must be at least 1")
        return EXIT_CONFIG

    if args.command == "run":
        result = run_experiment(args.config, args.out, jobs=args.jobs, fmt=args.format)
        if result.exit_code == EXIT_OK:
            print(f"✅ Wrote {len(result.trace_paths)} traces and {result.summary_path}")
        else:
            print(f"❌ {result.message}")
        return result.exit_code

    if args.command == "diag":
        result = run_diagnostics(args.config, args.out, lipschitz_scale=args.lipschitz_scale, jobs=args.jobs)
        if result.exit_code == EXIT_OK:
            print(f"✅ {len(result.reports)} configurations within bounds")
        else:
            print(f"❌ {result.message}")
        return result.exit_code

    try:
        table = compare_report(args.summaries, fmt=args.format)
    except (ConfigError, OSError) as e:
        print(f"❌ {e}")
        return EXIT_CONFIG
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(table, encoding="utf-8")
        print(f"✅ Wrote {args.out}")
    else:
        sys.stdout.write(table)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
