"""Command line entry point: ``mdiscord <subcommand> [--config PATH] ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config, validate_config
from .pipeline import run_pipeline, run_stage, synth_pulses, write_manifest

SUBCOMMANDS = ("synth-pulses", "sample", "tomo", "reconstruct", "discord", "run-all", "validate")


def _lambda_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdiscord", description=__doc__)
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument("--out", type=Path, default=Path("out"), help="artifact directory")
    parser.add_argument("--workers", type=int, default=1, help="worker processes")
    parser.add_argument("--lambda-filter", type=_lambda_list, default=None, help="comma-separated strengths to run")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, lambdas=args.lambda_filter)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    problems = validate_config(cfg)
    if args.workers < 1:
        problems.append(("--workers", "must be >= 1"))
    if args.subcommand == "validate" or problems:
        for path, msg in problems:
            print(f"{path}: {msg}")
        if not problems:
            print("ok")
        return 1 if problems else 0

    out = args.out
    if args.subcommand == "run-all":
        run_pipeline(cfg, out, args.workers)
        return 0
    if args.subcommand == "synth-pulses":
        synth_pulses(cfg, out)
    else:
        run_stage(cfg, out, args.subcommand, args.workers)
    write_manifest(out, cfg)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
