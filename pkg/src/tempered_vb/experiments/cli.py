"""Command line entry point ``tempered-vb``.

Exit codes: 0 success, 1 invariant violation, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .. import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .runners import InvariantViolation, run_experiment

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tempered-vb")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a YAML config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None, help="report path (JSON; a CSV is written alongside)")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--reps", type=int, default=None)
    check = sub.add_parser("check-divergences", help="run the divergence property grid")
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--out", default=None)
    sub.add_parser("version")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    try:
        if args.command == "check-divergences":
            cfg = ExperimentConfig(kind="divergence-check", seed=args.seed)
        else:
            cfg = load_config(args.config)
            overrides = {k: getattr(args, k) for k in ("seed", "reps") if getattr(args, k) is not None}
            if overrides:
                cfg = cfg.resolved(**overrides)
        report = run_experiment(cfg, args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(report.summary, indent=2, default=str))
    if report.paths:
        print(f"report written to {report.paths['json']}")
    if cfg.kind == "divergence-check":
        s = report.summary
        if s["violations"] > 0 or s["max_deviation"] >= 1e-6:
            print("invariant violation: divergence checks failed", file=sys.stderr)
            return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
