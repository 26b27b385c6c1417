"""Command-line entry point.

Every subcommand reads an INI config (``--config``) and accepts ``--seed``,
``--budget`` and ``--out`` overrides. Exit codes: 0 success, 2 config error,
3 step failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import harness
from .harness import (
    CLASSICAL_KRR,
    CLASSICAL_SVM,
    GA,
    MUZERO,
    RANDOM_FLEXIBLE,
    RANDOM_LAYERED,
    REFERENCE,
    BenchmarkConfig,
    ConfigError,
    ReportError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STEP = 3

BASELINES = (RANDOM_LAYERED, RANDOM_FLEXIBLE, GA)
CLASSICAL = (CLASSICAL_SVM, CLASSICAL_KRR)

SUBCOMMANDS = {
    "search": "MuZero circuit search followed by tuning and the final test",
    "baseline": "random layered, random flexible and GA arms",
    "reference": "KTA-optimized reference circuits",
    "classical": "classical kernel model on the raw features",
    "evaluate": "every method listed in the config",
    "report": "merge the reports under the output directory and re-emit them",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pqcsearch", description="Encoding-circuit search benchmark")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=name != "report", help="INI config file")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--budget", type=int, help="override the CV-evaluation budget per arm")
        p.add_argument("--out", help="override the output directory")
        if name in ("baseline", "classical"):
            p.add_argument("--method", action="append", help="restrict to these methods (repeatable)")
    return parser


def _methods(command: str, config: BenchmarkConfig, chosen: Optional[Sequence[str]]) -> tuple:
    if command == "search":
        return (MUZERO,)
    if command == "reference":
        return (REFERENCE,)
    if command == "evaluate":
        return config.methods
    allowed = BASELINES if command == "baseline" else CLASSICAL
    if chosen:
        bad = [m for m in chosen if m not in allowed]
        if bad:
            raise ConfigError(f"{command} accepts methods {allowed}, got {bad}")
        return tuple(chosen)
    if command == "classical":
        return (CLASSICAL_KRR,) if harness.dataset_task(config) == "regression" else (CLASSICAL_SVM,)
    return allowed


def _report(out: Path) -> int:
    paths = sorted(p for p in out.rglob("report.json") if p.parent != out)
    if not paths:
        raise ReportError(f"no report.json found under {out}")
    merged = harness.merge_reports([harness.load_report(p) for p in paths])
    harness.emit_report(merged, out)
    print((out / "summary.txt").read_text(), end="")
    return EXIT_STEP if merged.failed else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report" and not args.config:
            return _report(Path(args.out or "runs"))
        config = BenchmarkConfig.load(args.config).replace(seed=args.seed, budget=args.budget, out_dir=args.out)
        if args.command == "report":
            return _report(Path(config.out_dir))
        methods = _methods(args.command, config, getattr(args, "method", None))
        report = harness.run_pipeline(config, methods)
        target = Path(config.out_dir) / args.command
        harness.emit_report(report, target)
        print((target / "summary.txt").read_text(), end="")
        return EXIT_STEP if report.failed else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_STEP


if __name__ == "__main__":
    sys.exit(main())
