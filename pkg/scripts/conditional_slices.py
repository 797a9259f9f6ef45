"""Conditional tomograms and their I_m = 0 / Q_m = 0 cuts with theory overlays.

Runs sampling, per-bin tomography and reconstruction for every configured
strength and leaves tomogram_*.csv and slices_*.csv in the output directory.

    python scripts/conditional_slices.py --config configs/quick.yaml --out results/
"""
import argparse
import logging
from pathlib import Path

from mdiscord.config import load_config, validate_config
from mdiscord.pipeline import run_stage


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config)
    problems = validate_config(cfg)
    if problems:
        raise SystemExit("\n".join(f"{p}: {m}" for p, m in problems))
    run_stage(cfg, args.out, "reconstruct", args.workers, reuse=False)


if __name__ == "__main__":
    main()
