"""Command-line front end.

Exit codes: 0 when the run converged, 2 when it hit the iteration cap,
1 on any error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .runner import ConfigError, compare_report, parse_config, run


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topoproj",
                                     description="Density-based topology optimization "
                                                 "with automatic projection continuation")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a configured optimization run")
    p_run.add_argument("--config", required=True, type=Path, help="config file path")
    p_run.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p_run.add_argument("--max-iters", type=int, default=None, help="iteration cap override")
    p_run.add_argument("--scheme", default=None, help="continuation scheme override")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = parse_config(args.config.read_text())
        if args.max_iters is not None:
            if args.max_iters < 1:
                raise ConfigError("--max-iters: must be >= 1")
            config.max_iters = args.max_iters
        if args.scheme is not None:
            config.build_scheme(args.scheme)  # validate the name early
            config.scheme_type = args.scheme
            config.comparison_schemes = []

        if config.comparison_schemes:
            summaries = []
            for name in config.comparison_schemes:
                summaries.append(run(config, args.out / name, scheme_name=name))
            table = compare_report(summaries)
            (args.out / "comparison.txt").write_text(table, newline="\n")
            sys.stdout.write(table)
            capped = any(s.result.termination != "converged" for s in summaries)
            return 2 if capped else 0

        summary = run(config, args.out)
        final = summary.result.final
        sys.stdout.write(
            f"{summary.problem_name} [{summary.scheme_name}]: "
            f"{summary.result.termination} after {summary.result.iterations} iterations, "
            f"objective {final.objective:.6g}, beta {final.beta:.4g}, "
            f"gray {final.gray:.2e}\n")
        return 0 if summary.result.termination == "converged" else 2
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
