"""``swinghjb run <config>``: one configuration, one output directory."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import SwingError
from .config import OUTPUT_ROOT_ENV, apply_overrides, load_raw, resolve
from .run import run_valuation


def _ladder(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--ladder expects comma-separated numbers: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swinghjb",
        description="Value swing contracts by solving the HJB equation and verify the result.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="solve, extract the policy, verify and write artifacts")
    run.add_argument("config", help="TOML run configuration")
    run.add_argument("--dry-run", action="store_true", help="validate and print the resolved config; write nothing")
    run.add_argument("--output", metavar="DIR",
                     help=f"output directory (default: ${OUTPUT_ROOT_ENV} or ./runs, plus the config name)")
    run.add_argument("--seed-override", type=int, metavar="N", help="replace verify.seed")
    run.add_argument("--ladder", type=_ladder, metavar="C1,C2,...", help="replace solver.ladder")
    run.add_argument("-v", "--verbose", action="store_true", help="log solver diagnostics")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = apply_overrides(load_raw(args.config), seed=args.seed_override, ladder=args.ladder,
                              output=args.output)
        cfg = resolve(raw, args.config)
        if args.dry_run:
            print(json.dumps({"config_hash": cfg.config_hash(), **cfg.values}, indent=2, sort_keys=True))
            return 0
        status, _ = run_valuation(cfg)
        return status
    except SwingError as exc:
        print(f"swinghjb: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"swinghjb: I/O error: {exc}", file=sys.stderr)
        return 2
