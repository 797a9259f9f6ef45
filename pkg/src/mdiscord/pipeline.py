"""End-to-end synthetic experiment: pulses, shots, tomography, MLE, Xi, discord.

Every random draw is keyed by (seed, strength index, chunk, stream) so results
do not depend on the number of workers.  Artifacts are plain CSV/JSON with
floats written by ``repr`` so repeated runs are byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .discord_analysis import (
    DiscordResult,
    Marginal,
    XiPair,
    bootstrap_discord,
    discord_results,
    marginalize_pauli,
    optimize_xi_or_zero,
    reconstruct_bins,
)
from .grid import ConditionalGrid
from .measurement_model import (
    BinGrid,
    CLOSED_FORM_LABELS,
    ModelParams,
    bin_indices,
    closed_form_components,
    conditional_states,
    default_grid,
    sample_outcomes,
    strength_from_separation,
)
from .pulse_synthesis import (
    footprint,
    matched_pulses,
    pointer_moments,
    spectral_fwhm,
    strength_integral,
)
from .quantum_core import PAULI_INDEX, PAULI_LABELS, pauli_expectations
from .tomography import OUTCOME_LABELS, SETTINGS, _rng, measure_shots

log = logging.getLogger("mdiscord")

MANIFEST = "manifest.json"
_SHARD_STRIDE = 1_000_000


@contextmanager
def stage(name: str):
    t0 = time.perf_counter()
    log.info("%s: start", name)
    yield
    log.info("%s: done in %.2f s", name, time.perf_counter() - t0)


def lam_tag(lam: float) -> str:
    return f"lam_{lam:.3f}"


def _f(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- pulses


def synth_pulses(cfg: RunConfig, out: Path) -> dict:
    """Matched drives at unit strength plus a summary of the matching quality."""
    kw = dict(
        envelope=cfg.envelope,
        alice=cfg.alice,
        bob=cfg.bob,
        jpc_a=cfg.jpc_alice,
        jpc_b=cfg.jpc_bob,
        n=cfg.pulse_grid.n_samples,
        dt=cfg.pulse_grid.dt,
    )
    pulses = matched_pulses(**kw).scaled_to(1.0)
    uncomp = matched_pulses(**kw, compensate_bob=False)
    strengths = []
    for lam in cfg.lambdas:
        if lam == 0:
            strengths.append({"lambda": lam, "drive_scale": 0.0, "lambda_from_pointer": 0.0})
            continue
        scaled = pulses.scaled_to(lam)
        i_bar, sigma = pointer_moments(scaled.signal_a)
        strengths.append(
            {
                "lambda": lam,
                "drive_scale": math.sqrt(lam),
                "lambda_from_pointer": strength_from_separation(i_bar, sigma),
            }
        )
    summary = {
        "mismatch": pulses.mismatch,
        "mismatch_uncompensated_bob": uncomp.mismatch,
        "strength_unit_pulse": strength_integral(pulses.signal_a),
        "signal_fwhm_hz": spectral_fwhm(pulses.signal_a),
        "drive_footprint_s": max(footprint(pulses.drive_a, 1e-3), footprint(pulses.drive_b, 1e-3)),
        "strengths": strengths,
    }
    out.mkdir(parents=True, exist_ok=True)
    mags = np.abs(np.stack([pulses.drive_a.samples, pulses.drive_b.samples, pulses.signal_a.samples]))
    live = np.nonzero((mags > 1e-9 * mags.max(axis=1, keepdims=True)).any(axis=0))[0]
    lo, hi = live[0], live[-1] + 1
    with open(out / "pulses.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_seconds", "drive_a_re", "drive_a_im", "drive_b_re", "drive_b_im", "s_a_re", "s_a_im", "s_b_re", "s_b_im"])
        t = pulses.drive_a.times
        for k in range(lo, hi):
            row = [t[k]]
            for wf in (pulses.drive_a, pulses.drive_b, pulses.signal_a, pulses.signal_b):
                row += [wf.samples[k].real, wf.samples[k].imag]
            w.writerow([_f(v) for v in row])
    _write_json(out / "pulse_summary.json", summary)
    return summary


# ---------------------------------------------------------------- shots and tomography


def lambda_grid(cfg: RunConfig, lam: float) -> BinGrid:
    return default_grid(lam, cfg.model, cfg.grid.n_bins, cfg.grid.span_sigma)


def simulate_run(cfg: RunConfig, lam_index: int, lam: float) -> ConditionalGrid:
    """Sample ``shots_total`` outcomes, bin them and take one tomography readout per shot.

    Within each bin, consecutive shots cycle through the nine settings.
    """
    grid = lambda_grid(cfg, lam)
    ni, nq = grid.shape
    nbins = ni * nq
    shot_counts = np.zeros(nbins, dtype=np.int64)
    tomo = np.zeros(nbins * 36, dtype=np.int64)
    n_chunks = -(-cfg.shots_total // cfg.chunk_shots)
    clamped = 0
    for k in range(n_chunks):
        n = min(cfg.chunk_shots, cfg.shots_total - k * cfg.chunk_shots)
        shard = lam_index * _SHARD_STRIDE + k
        batch = sample_outcomes(lam, n, cfg.model, seed=cfg.seed, shard=shard)
        ii, qq, cl = bin_indices(batch.i_m, batch.q_m, grid)
        clamped += int(cl.sum())
        flat = ii * nq + qq
        # Rank of each shot among earlier shots in its bin, for round-robin settings.
        order = np.argsort(flat, kind="stable")
        sorted_bins = flat[order]
        first = np.searchsorted(sorted_bins, sorted_bins, side="left")
        rank = np.empty(n, dtype=np.int64)
        rank[order] = np.arange(n) - first
        settings = (shot_counts[flat] + rank) % len(SETTINGS)
        shot_counts += np.bincount(flat, minlength=nbins)

        pv = pauli_expectations(conditional_states(lam, batch.i_m, batch.q_m, cfg.model))
        outcomes = measure_shots(pv, settings, cfg.c_tomo_readout, _rng(cfg.seed, shard, 1))
        tomo += np.bincount(flat * 36 + settings * 4 + outcomes, minlength=nbins * 36)
    if clamped:
        log.info("lambda=%g: %d shots clamped into edge bins", lam, clamped)
    return ConditionalGrid(
        grid=grid,
        lam=lam,
        shot_counts=shot_counts.reshape(ni, nq),
        tomo_counts=tomo.reshape(ni, nq, 9, 4),
    )


def _reconstruct_rows(args):
    counts, c_tomo, min_records = args
    return reconstruct_bins(counts, c_tomo, min_records)


def reconstruct(grid: ConditionalGrid, cfg: RunConfig, workers: int = 1) -> ConditionalGrid:
    """Per-bin MLE over a bounded worker pool (rows of the grid are the work units)."""
    ni = grid.shape[0]
    jobs = [(grid.tomo_counts[i : i + 1], cfg.c_tomo_readout, cfg.min_shots) for i in range(ni)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_reconstruct_rows, jobs))
    else:
        parts = [_reconstruct_rows(j) for j in jobs]
    pauli = np.concatenate([p[0] for p in parts])
    done = np.concatenate([p[1] for p in parts])
    failures = [(i, idx[1], msg) for i, p in enumerate(parts) for idx, msg in p[2]]
    out = grid.with_pauli(pauli, done)
    out.failures = failures
    for i, j, msg in failures:
        log.warning("bin (%d, %d) not reconstructed: %s", i, j, msg)
    return out


# ---------------------------------------------------------------- analysis


@dataclass
class LambdaAnalysis:
    grid: ConditionalGrid
    xi_opt: XiPair
    xi_fallback: bool
    marginal: Marginal
    results: list[DiscordResult]


def analyze(grid: ConditionalGrid, cfg: RunConfig, workers: int = 1, bootstrap: bool = True) -> LambdaAnalysis:
    xi, fallback = optimize_xi_or_zero(grid, span=cfg.xi_span, step=cfg.xi_step)
    if fallback:
        log.info("lambda=%g: flat purity objective, using Xi = (0, 0)", grid.lam)
    boot = None
    if bootstrap:
        with stage(f"bootstrap lambda={grid.lam:g} ({cfg.bootstrap.n_resamples} resamples)"):
            boot = bootstrap_discord(grid, cfg.c_tomo_readout, xi, cfg.bootstrap, workers=workers)
    results = discord_results(grid, xi, boot, cfg.bootstrap, with_bin_average=cfg.bin_average)
    return LambdaAnalysis(grid, xi, fallback, marginalize_pauli(grid, xi), results)


# ---------------------------------------------------------------- artifact writers and readers


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if not math.isfinite(v) else v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_histogram(path: Path, grid: ConditionalGrid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_i_center", "bin_q_center", "count"])
        for i, ic in enumerate(grid.grid.i_centers):
            for j, qc in enumerate(grid.grid.q_centers):
                w.writerow([_f(ic), _f(qc), int(grid.shot_counts[i, j])])


def write_tomo_counts(path: Path, grid: ConditionalGrid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i_bin", "q_bin", "setting_a", "setting_b", *(f"n_{o}" for o in OUTCOME_LABELS)])
        for i, j in zip(*np.nonzero(grid.tomo_counts.sum(axis=(2, 3)))):
            for s, st in enumerate(SETTINGS):
                w.writerow([int(i), int(j), st.rot_a, st.rot_b, *(int(v) for v in grid.tomo_counts[i, j, s])])


def read_run_counts(cfg: RunConfig, lam: float, hist_path: Path, counts_path: Path) -> ConditionalGrid:
    grid = lambda_grid(cfg, lam)
    ni, nq = grid.shape
    shots = np.zeros((ni, nq), dtype=np.int64)
    with open(hist_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != ni * nq:
        raise ValueError(f"{hist_path}: expected {ni * nq} rows, found {len(rows)}")
    shots[:] = np.array([int(r["count"]) for r in rows]).reshape(ni, nq)
    tomo = np.zeros((ni, nq, 9, 4), dtype=np.int64)
    index = {(st.rot_a, st.rot_b): s for s, st in enumerate(SETTINGS)}
    with open(counts_path, newline="") as fh:
        for r in csv.DictReader(fh):
            s = index[(r["setting_a"], r["setting_b"])]
            tomo[int(r["i_bin"]), int(r["q_bin"]), s] = [int(r[f"n_{o}"]) for o in OUTCOME_LABELS]
    return ConditionalGrid(grid=grid, lam=lam, shot_counts=shots, tomo_counts=tomo)


def write_tomogram(path: Path, grid: ConditionalGrid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i_bin", "q_bin", "bin_i_center", "bin_q_center", "count", "reconstructed", *PAULI_LABELS])
        for i, ic in enumerate(grid.grid.i_centers):
            for j, qc in enumerate(grid.grid.q_centers):
                ok = bool(grid.reconstructed[i, j])
                vals = [_f(v) for v in grid.pauli[i, j]] if ok else [""] * 16
                w.writerow([i, j, _f(ic), _f(qc), int(grid.shot_counts[i, j]), int(ok), *vals])


def read_tomogram(path: Path, grid: ConditionalGrid) -> ConditionalGrid:
    ni, nq = grid.shape
    pauli = np.zeros((ni, nq, 16))
    pauli[..., 0] = 1.0
    done = np.zeros((ni, nq), dtype=bool)
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            if r["reconstructed"] == "1":
                i, j = int(r["i_bin"]), int(r["q_bin"])
                pauli[i, j] = [float(r[lbl]) for lbl in PAULI_LABELS]
                done[i, j] = True
    return grid.with_pauli(pauli, done)


def emit_slices(grid: ConditionalGrid, model: ModelParams) -> list[dict]:
    """Cuts through the conditional tomogram at I_m = 0 and Q_m = q_bar with theory.

    Theory comes from the closed forms for XX, YY, XY, YX, ZZ and from the
    generative model for the remaining components.
    """
    g = grid.grid
    i0 = g.i_index_of(0.0)
    q0 = g.q_index_of(model.q_bar)
    cuts = [("I_m=0", [(i0, j) for j in range(g.shape[1])]), ("Q_m=0", [(i, q0) for i in range(g.shape[0])])]
    rows = []
    for cut, cells in cuts:
        ic = np.array([g.i_centers[i] for i, _ in cells])
        qc = np.array([g.q_centers[j] for _, j in cells])
        closed = closed_form_components(grid.lam, ic, qc, model)
        generative = pauli_expectations(conditional_states(grid.lam, ic, qc, model))
        for label in PAULI_LABELS[1:]:
            for k, (i, j) in enumerate(cells):
                if label in CLOSED_FORM_LABELS:
                    theory, source = closed[label][k], "closed_form"
                else:
                    theory, source = generative[k, PAULI_INDEX[label]], "model"
                ok = bool(grid.reconstructed[i, j])
                rows.append(
                    {
                        "lambda": grid.lam,
                        "cut": cut,
                        "component": label,
                        "bin_i_center": float(g.i_centers[i]),
                        "bin_q_center": float(g.q_centers[j]),
                        "count": int(grid.shot_counts[i, j]),
                        "measured": float(grid.pauli[i, j, PAULI_INDEX[label]]) if ok else None,
                        "theory": float(theory),
                        "theory_source": source,
                    }
                )
    return rows


SLICE_COLUMNS = ["lambda", "cut", "component", "bin_i_center", "bin_q_center", "count", "measured", "theory", "theory_source"]


def write_slices(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SLICE_COLUMNS)
        for r in rows:
            w.writerow([_f(v) if isinstance(v, float) else ("" if v is None else v) for v in (r[c] for c in SLICE_COLUMNS)])


def write_marginal(path: Path, analysis: LambdaAnalysis) -> None:
    m = analysis.marginal
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i_bin", "bin_i_center", "weight", *PAULI_LABELS])
        for col, ic, wt, pv in zip(m.columns, m.i_centers, m.weights, m.pauli):
            w.writerow([int(col), _f(ic), _f(wt), *(_f(v) for v in pv)])


def read_marginal(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def discord_document(analysis: LambdaAnalysis) -> dict:
    g = analysis.grid
    return {
        "lambda": g.lam,
        "xi_opt": analysis.xi_opt.as_list(),
        "xi_fallback": analysis.xi_fallback,
        "skipped_columns": analysis.marginal.skipped,
        "failed_bins": [[i, j] for i, j, _ in g.failures],
        "records": [r.to_record() for r in analysis.results],
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: RunConfig) -> dict:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != MANIFEST)
    doc = {
        "package_version": __version__,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "lambdas": list(cfg.lambdas),
        "config": cfg.to_dict(),
        "files": [{"path": str(p.relative_to(out)), "sha256": _sha256(p), "bytes": p.stat().st_size} for p in files],
    }
    _write_json(out / MANIFEST, doc)
    return doc


# ---------------------------------------------------------------- stages


STAGES = ("sample", "tomo", "reconstruct", "discord")


def _paths(out: Path, lam: float) -> dict[str, Path]:
    t = lam_tag(lam)
    return {
        "hist": out / f"histogram_{t}.csv",
        "counts": out / f"tomo_counts_{t}.csv",
        "tomogram": out / f"tomogram_{t}.csv",
        "slices": out / f"slices_{t}.csv",
        "marginal": out / f"marginal_{t}.csv",
        "discord": out / f"discord_{t}.json",
    }


def run_stage(cfg: RunConfig, out: Path, upto: str, workers: int = 1, reuse: bool = True) -> None:
    """Run the pipeline up to and including ``upto`` for every configured strength.

    With ``reuse`` an earlier stage's files found in ``out`` are read back
    instead of being recomputed.
    """
    if upto not in STAGES:
        raise ValueError(f"unknown stage {upto!r}")
    level = STAGES.index(upto)
    out.mkdir(parents=True, exist_ok=True)
    for k, lam in enumerate(cfg.lambdas):
        p = _paths(out, lam)
        have_counts = reuse and p["hist"].exists() and p["counts"].exists()
        if have_counts and level >= STAGES.index("reconstruct"):
            grid = read_run_counts(cfg, lam, p["hist"], p["counts"])
        else:
            with stage(f"simulate lambda={lam:g} ({cfg.shots_total} shots)"):
                grid = simulate_run(cfg, k, lam)
            write_histogram(p["hist"], grid)
            if level >= STAGES.index("tomo"):
                write_tomo_counts(p["counts"], grid)
        if level < STAGES.index("reconstruct"):
            continue
        if upto == "discord" and reuse and p["tomogram"].exists():
            grid = read_tomogram(p["tomogram"], grid)
        else:
            with stage(f"reconstruct lambda={lam:g}"):
                grid = reconstruct(grid, cfg, workers)
            write_tomogram(p["tomogram"], grid)
            write_slices(p["slices"], emit_slices(grid, cfg.model))
        if level < STAGES.index("discord"):
            continue
        with stage(f"discord lambda={lam:g}"):
            analysis = analyze(grid, cfg, workers)
        write_marginal(p["marginal"], analysis)
        _write_json(p["discord"], discord_document(analysis))


def run_pipeline(cfg: RunConfig, out: str | Path, workers: int = 1) -> Path:
    """Full run from scratch: pulses, then every stage for every strength, then the manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with stage("synth-pulses"):
        synth_pulses(cfg, out)
    run_stage(cfg, out, "discord", workers, reuse=False)
    write_manifest(out, cfg)
    return out

