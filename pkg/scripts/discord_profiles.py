"""Discord versus I_m for every strength, gathered into one tidy table.

Runs the full pipeline, then flattens the per-strength discord JSON files into
discord_profiles.csv (one row per strength and I_m column) and adds the
discord of the noiseless model states marginalized the same way.

    python scripts/discord_profiles.py --config configs/quick.yaml --out results/
"""
import argparse
import csv
import json
import logging
from pathlib import Path

import numpy as np

from mdiscord.config import load_config, validate_config
from mdiscord.discord_analysis import column_discord, marginalize_pauli, optimize_xi_or_zero
from mdiscord.grid import ConditionalGrid
from mdiscord.measurement_model import conditional_states, outcome_density
from mdiscord.pipeline import lam_tag, lambda_grid, run_pipeline
from mdiscord.quantum_core import pauli_expectations


def model_profile(cfg, lam):
    g = lambda_grid(cfg, lam)
    ii, qq = np.meshgrid(g.i_centers, g.q_centers, indexing="ij")
    w = outcome_density(lam, ii, qq, cfg.model)
    grid = ConditionalGrid.from_states(g, lam, w / w.sum(), pauli_expectations(conditional_states(lam, ii, qq, cfg.model)))
    xi, _ = optimize_xi_or_zero(grid, span=cfg.xi_span, step=cfg.xi_step)
    m = marginalize_pauli(grid, xi)
    return dict(zip(np.round(m.i_centers, 12).tolist(), column_discord(m)))


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
    run_pipeline(cfg, args.out, args.workers)

    cols = ["lambda", "i_m_center", "d_alice", "d_bob", "ci_a_lo", "ci_a_hi", "ci_b_lo", "ci_b_hi",
            "d_avg_alice", "d_avg_bob", "model_d_alice", "model_d_bob", "r"]
    with open(args.out / "discord_profiles.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for lam in cfg.lambdas:
            doc = json.loads((args.out / f"discord_{lam_tag(lam)}.json").read_text())
            model = model_profile(cfg, lam)
            for r in doc["records"]:
                md = model.get(round(r["i_m_center"], 12), (None, None))
                w.writerow([lam, r["i_m_center"], r["d_alice"], r["d_bob"], *r["ci_a"], *r["ci_b"],
                            r["d_avg_alice"], r["d_avg_bob"], md[0], md[1], r["r"]])


if __name__ == "__main__":
    main()
