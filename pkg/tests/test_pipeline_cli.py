import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml

from mdiscord.cli import main
from mdiscord.config import GridSpec, RunConfig, config_from_dict, load_config, validate_config
from mdiscord.discord_analysis import BootstrapConfig
from mdiscord.measurement_model import ModelParams, Outcome, conditional_pauli_closed_form
from mdiscord.pipeline import (
    MANIFEST,
    emit_slices,
    read_tomogram,
    reconstruct,
    run_pipeline,
    simulate_run,
    write_tomogram,
)
from mdiscord.quantum_core import PAULI_INDEX

ROOT = Path(__file__).resolve().parents[1]

SMALL = {
    "seed": 4,
    "lambdas": [0.0, 1.3],
    "shots_total": 20000,
    "chunk_shots": 7000,
    "report_bin_average": False,
    "grid": {"n_bins": 9, "span_sigma": 4.0},
    "pulse_grid": {"n_samples": 4096},
    "bootstrap": {"n_resamples": 3, "seed": 1},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


def test_shipped_configs_are_valid():
    assert validate_config(RunConfig()) == []
    for name in ("default.yaml", "quick.yaml"):
        assert validate_config(load_config(ROOT / "configs" / name)) == []
    assert load_config(ROOT / "configs" / "default.yaml") == RunConfig()


def test_validate_reports_paths():
    bad = config_from_dict({"model": {"eta_a": 1.3}})
    assert [p for p, _ in validate_config(bad)] == ["model.eta_a"]
    unsorted = validate_config(config_from_dict({"lambdas": [1.0, 0.3, 0.6]}))
    assert unsorted == [("lambdas", "not sorted; use [0.3, 0.6, 1.0]")]
    typo = validate_config(config_from_dict({"modle": {}}))
    assert typo and typo[0][0] == "modle"


def test_cli_validate_exit_status(tmp_path, capsys):
    assert main(["validate"]) == 0
    assert capsys.readouterr().out.strip() == "ok"
    path = tmp_path / "bad.yaml"
    path.write_text("model:\n  eta_a: 1.3\n")
    assert main(["validate", "--config", str(path)]) == 1
    assert "model.eta_a" in capsys.readouterr().out
    # other subcommands refuse to start on a bad config
    assert main(["sample", "--config", str(path), "--out", str(tmp_path / "x")]) == 1
    assert not (tmp_path / "x").exists()


def test_grid_totals_equal_configured_shots():
    cfg = replace(RunConfig(), shots_total=12345, chunk_shots=5000, grid=GridSpec(n_bins=7))
    g = simulate_run(cfg, 0, 0.6)
    assert g.shot_counts.sum() == 12345
    assert g.tomo_counts.sum() == 12345
    assert np.array_equal(g.tomo_counts.sum(axis=(2, 3)), g.shot_counts)
    assert g.weights.sum() == pytest.approx(1)
    # round-robin settings: within a bin the nine settings differ by at most one shot
    per = g.tomo_counts.sum(axis=3)
    assert np.all(per.max(axis=2) - per.min(axis=2) <= 1)


def test_reconstructed_bins_meet_minimum():
    cfg = replace(RunConfig(), shots_total=20000, grid=GridSpec(n_bins=9))
    g = reconstruct(simulate_run(cfg, 0, 1.0), cfg)
    assert g.reconstructed.any()
    assert np.all(g.shot_counts[g.reconstructed] >= cfg.min_shots)


def test_slices_theory_matches_closed_form_at_zero_strength():
    cfg = replace(RunConfig(), shots_total=5000, grid=GridSpec(n_bins=9))
    g = reconstruct(simulate_run(cfg, 0, 0.0), cfg)
    rows = emit_slices(g, cfg.model)
    assert {r["cut"] for r in rows} == {"I_m=0", "Q_m=0"}
    assert len({r["component"] for r in rows}) == 15
    for r in rows:
        if r["cut"] == "I_m=0" and r["theory_source"] == "closed_form":
            ref = conditional_pauli_closed_form(0.0, Outcome(r["bin_i_center"], r["bin_q_center"]), cfg.model)
            assert r["theory"] == pytest.approx(ref[r["component"]], abs=1e-15)
    xx = [r["theory"] for r in rows if r["cut"] == "I_m=0" and r["component"] == "XX"]
    assert np.ptp(xx) < 1e-12  # no fringes without measurement


def test_zz_slice_follows_closed_form():
    cfg = replace(RunConfig(), shots_total=300_000, grid=GridSpec(n_bins=25), seed=1)
    g = reconstruct(simulate_run(cfg, 0, 1.3), cfg)
    rows = [r for r in emit_slices(g, cfg.model) if r["cut"] == "Q_m=0" and r["component"] == "ZZ"]
    checked = 0
    for r in rows:
        if r["measured"] is None or r["count"] < 900:
            continue
        # ZZ comes from the (I, I) setting, a ninth of the records, read with contrast 0.81
        se = math.sqrt(1 - (0.81 * r["theory"]) ** 2) / (0.81 * math.sqrt(r["count"] / 9))
        assert abs(r["measured"] - r["theory"]) < 5 * se + 0.02
        checked += 1
    assert checked >= 5


def test_tomogram_round_trip(tmp_path):
    cfg = replace(RunConfig(), shots_total=5000, grid=GridSpec(n_bins=5))
    g = reconstruct(simulate_run(cfg, 0, 0.6), cfg)
    write_tomogram(tmp_path / "t.csv", g)
    back = read_tomogram(tmp_path / "t.csv", g)
    assert np.array_equal(back.reconstructed, g.reconstructed)
    assert np.array_equal(back.pauli[g.reconstructed], g.pauli[g.reconstructed])


def test_staged_cli_matches_run_all(tmp_path, small_config):
    staged, full = tmp_path / "staged", tmp_path / "full"
    for sub in ("synth-pulses", "sample", "tomo", "reconstruct", "discord"):
        assert main([sub, "--config", str(small_config), "--out", str(staged)]) == 0
    assert main(["run-all", "--config", str(small_config), "--out", str(full)]) == 0
    names = sorted(p.name for p in full.iterdir())
    assert names == sorted(p.name for p in staged.iterdir())
    for name in names:
        if name != MANIFEST:
            assert (staged / name).read_bytes() == (full / name).read_bytes(), name


def test_manifest_lists_every_file(tmp_path, small_config):
    out = tmp_path / "run"
    assert main(["run-all", "--config", str(small_config), "--out", str(out)]) == 0
    doc = json.loads((out / MANIFEST).read_text())
    listed = {f["path"] for f in doc["files"]}
    assert listed == {p.name for p in out.iterdir()} - {MANIFEST}
    assert doc["seed"] == 4 and len(doc["config_sha256"]) == 64
    for name in ("pulses.csv", "pulse_summary.json", "histogram_lam_0.000.csv", "tomogram_lam_1.300.csv",
                 "slices_lam_1.300.csv", "marginal_lam_1.300.csv", "discord_lam_0.000.json"):
        assert name in listed
    header = (out / "histogram_lam_0.000.csv").read_text().splitlines()[0]
    assert header == "bin_i_center,bin_q_center,count"


def test_zero_strength_run_has_no_discord(tmp_path, small_config):
    out = tmp_path / "run"
    assert main(["run-all", "--config", str(small_config), "--out", str(out), "--lambda-filter", "0"]) == 0
    doc = json.loads((out / "discord_lam_0.000.json").read_text())
    assert doc["lambda"] == 0.0
    central = min(doc["records"], key=lambda r: abs(r["i_m_center"]))
    assert central["ci_a"][0] <= 1e-6 or central["d_alice"] < 0.02
    assert not (out / "discord_lam_1.300.json").exists()


def test_seed_override_changes_outputs(tmp_path, small_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sample", "--config", str(small_config), "--out", str(a)]) == 0
    assert main(["sample", "--config", str(small_config), "--out", str(b), "--seed", "99"]) == 0
    name = "histogram_lam_1.300.csv"
    assert (a / name).read_bytes() != (b / name).read_bytes()


def test_run_pipeline_returns_directory(tmp_path):
    cfg = config_from_dict({**SMALL, "lambdas": [0.6], "bootstrap": {"n_resamples": 1}})
    out = run_pipeline(cfg, tmp_path / "p")
    assert (out / MANIFEST).exists()
