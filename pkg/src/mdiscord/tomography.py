"""Nine-setting two-qubit tomography with symmetric readout error.

Each setting applies one of ``I, X90, Y90`` to each qubit and then reads both
qubits in Z.  Outcomes are ordered ``gg, ge, eg, ee`` (first letter Alice);
readout flips each bit independently with probability ``(1 - c) / 2``.

Reconstruction is either linear inversion or maximum likelihood over
``rho = T^dag T / Tr(T^dag T)`` with ``T`` lower triangular.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .quantum_core import (
    PAULI_INDEX,
    PAULI_LABELS,
    PAULI_MATRICES,
    SINGLE_PAULIS,
    Z,
    check_density_matrix,
    pauli_expectations,
    psd_project,
    rx,
    ry,
)

ROTATION_NAMES = ("I", "X90", "Y90")
ROTATIONS = {"I": np.eye(2, dtype=complex), "X90": rx(np.pi / 2), "Y90": ry(np.pi / 2)}
OUTCOME_LABELS = ("gg", "ge", "eg", "ee")
# Bit values (0 = g) of Alice and Bob for each outcome index.
_BITS = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])

MAX_ITER = 5000
LL_GAIN_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """The likelihood optimizer stopped at its iteration cap."""


def _measured_axis(rot: np.ndarray) -> tuple[str, float]:
    """Pauli letter and sign of U^dag Z U, the observable read after rotation U."""
    op = rot.conj().T @ Z @ rot
    for letter in "XYZ":
        overlap = np.trace(op @ SINGLE_PAULIS[letter]).real / 2
        if abs(abs(overlap) - 1) < 1e-12:
            return letter, float(np.sign(overlap))
    raise ValueError("rotation does not map Z onto a Pauli axis")


@dataclass(frozen=True)
class TomoSetting:
    rot_a: str
    rot_b: str

    def __post_init__(self):
        for r in (self.rot_a, self.rot_b):
            if r not in ROTATIONS:
                raise ValueError(f"unknown rotation {r!r}; expected one of {ROTATION_NAMES}")

    @property
    def unitary(self) -> np.ndarray:
        return np.kron(ROTATIONS[self.rot_a], ROTATIONS[self.rot_b])

    @property
    def axes(self) -> tuple[tuple[str, float], tuple[str, float]]:
        return _measured_axis(ROTATIONS[self.rot_a]), _measured_axis(ROTATIONS[self.rot_b])


SETTINGS: tuple[TomoSetting, ...] = tuple(TomoSetting(a, b) for a in ROTATION_NAMES for b in ROTATION_NAMES)


def _check_contrast(c_tomo: float) -> None:
    if not 0.0 <= c_tomo <= 1.0:
        raise ValueError(f"c_tomo must lie in [0, 1], got {c_tomo}")


def povm_pauli(c_tomo: float) -> np.ndarray:
    """Noisy POVM elements in the Pauli basis, shape (9, 4, 16).

    ``p[s, o] = povm_pauli(c)[s, o] @ pauli_vector``.
    """
    _check_contrast(c_tomo)
    return _povm_pauli(float(c_tomo)).copy()


@lru_cache(maxsize=16)
def _povm_pauli(c_tomo: float) -> np.ndarray:
    out = np.zeros((len(SETTINGS), 4, 16))
    for s, st in enumerate(SETTINGS):
        (la, sa), (lb, sb) = st.axes
        for o, (a, b) in enumerate(_BITS):
            ea, eb = (-1.0) ** a * sa * c_tomo, (-1.0) ** b * sb * c_tomo
            out[s, o, PAULI_INDEX["II"]] = 1.0
            out[s, o, PAULI_INDEX[la + "I"]] = ea
            out[s, o, PAULI_INDEX["I" + lb]] = eb
            out[s, o, PAULI_INDEX[la + lb]] = ea * eb
    return out / 4


def povm_matrices(c_tomo: float) -> np.ndarray:
    """Noisy POVM elements as (9, 4, 4, 4) matrices."""
    _check_contrast(c_tomo)
    return _povm_matrices(float(c_tomo)).copy()


@lru_cache(maxsize=16)
def _povm_matrices(c_tomo: float) -> np.ndarray:
    return np.einsum("sok,kij->soij", _povm_pauli(c_tomo), PAULI_MATRICES)


def outcome_probabilities(rho: np.ndarray, c_tomo: float) -> np.ndarray:
    """(9, 4) outcome probabilities for one state."""
    p = povm_pauli(c_tomo) @ pauli_expectations(rho)
    return np.clip(p, 0.0, None)


@dataclass
class CountsTable:
    """Outcome counts per setting, shape (9, 4)."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.shape != (len(SETTINGS), 4):
            raise ValueError(f"counts must have shape (9, 4), got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def shots_per_setting(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total(self) -> float:
        return self.counts.sum()

    def __add__(self, other: "CountsTable") -> "CountsTable":
        return CountsTable(self.counts + other.counts)


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def flip_bits(outcomes: np.ndarray, c_tomo: float, rng: np.random.Generator) -> np.ndarray:
    """Apply independent readout flips with probability (1 - c)/2 to outcome indices."""
    _check_contrast(c_tomo)
    p_flip = (1 - c_tomo) / 2
    flips = rng.random((len(outcomes), 2)) < p_flip
    bits = _BITS[outcomes] ^ flips
    return 2 * bits[:, 0] + bits[:, 1]


def measure_shots(
    pauli_vectors: np.ndarray, settings: np.ndarray, c_tomo: float, rng: np.random.Generator
) -> np.ndarray:
    """One strong readout per shot.

    ``pauli_vectors`` is (n, 16), the state of each shot; ``settings`` holds
    setting indices.  Returns outcome indices after readout error.
    """
    ideal = _povm_pauli(1.0)[settings]  # (n, 4, 16)
    p = np.einsum("nok,nk->no", ideal, pauli_vectors)
    p = np.clip(p, 0.0, None)
    cdf = np.cumsum(p, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random(len(settings))
    outcomes = np.minimum((u[:, None] >= cdf).sum(axis=1), 3)
    return flip_bits(outcomes, c_tomo, rng)


def simulate_tomography(rho: np.ndarray, shots, c_tomo: float, seed: int, shard: tuple[int, ...] = ()) -> CountsTable:
    """Counts from ``shots`` readouts per setting (int or length-9 sequence)."""
    _check_contrast(c_tomo)
    rho = check_density_matrix(rho)
    per = np.broadcast_to(np.asarray(shots, dtype=np.int64), (len(SETTINGS),))
    if np.any(per < 0) or per.sum() < 1:
        raise ValueError("need at least one shot")
    rng = _rng(seed, *shard)
    ideal = outcome_probabilities(rho, 1.0)
    counts = np.zeros((len(SETTINGS), 4), dtype=np.int64)
    for s in range(len(SETTINGS)):
        if per[s] == 0:
            continue
        p = ideal[s] / ideal[s].sum()
        true = np.repeat(np.arange(4), rng.multinomial(per[s], p))
        seen = flip_bits(true, c_tomo, rng)
        counts[s] = np.bincount(seen, minlength=4)
    return CountsTable(counts)


def counts_from_records(settings: np.ndarray, outcomes: np.ndarray) -> CountsTable:
    counts = np.zeros((len(SETTINGS), 4), dtype=np.int64)
    np.add.at(counts, (settings, outcomes), 1)
    return CountsTable(counts)


def linear_estimate(counts: CountsTable, c_tomo: float) -> np.ndarray:
    """Pauli vector by readout-error inversion and parity averaging.

    Each Pauli is averaged over all settings that measure it, weighted by
    their shot numbers.  Paulis without data are set to 0.
    """
    _check_contrast(c_tomo)
    if c_tomo == 0:
        raise ValueError("readout with zero contrast cannot be inverted")
    n = np.asarray(counts.counts, dtype=float)
    sums = np.zeros(16)
    weights = np.zeros(16)
    sign_a = 1 - 2 * _BITS[:, 0]
    sign_b = 1 - 2 * _BITS[:, 1]
    for s, st in enumerate(SETTINGS):
        tot = n[s].sum()
        if tot == 0:
            continue
        f = n[s] / tot
        (la, sa), (lb, sb) = st.axes
        for label, value in (
            (la + "I", sa * (f @ sign_a) / c_tomo),
            ("I" + lb, sb * (f @ sign_b) / c_tomo),
            (la + lb, sa * sb * (f @ (sign_a * sign_b)) / c_tomo**2),
        ):
            k = PAULI_INDEX[label]
            sums[k] += tot * value
            weights[k] += tot
    pv = np.divide(sums, weights, out=np.zeros(16), where=weights > 0)
    pv[PAULI_INDEX["II"]] = 1.0
    return pv


def _smoothed(counts: CountsTable) -> np.ndarray:
    # Half a pseudo-count per cell, only for settings containing an empty cell.
    n = np.asarray(counts.counts, dtype=float).copy()
    empty = (n == 0).any(axis=1) & (n.sum(axis=1) > 0)
    n[empty] += 0.5
    return n


def log_likelihood(rho: np.ndarray, counts: CountsTable, c_tomo: float, smooth: bool = True) -> float:
    n = _smoothed(counts) if smooth else np.asarray(counts.counts, dtype=float)
    p = outcome_probabilities(rho, c_tomo)
    return float(np.sum(n * np.log(np.maximum(p, 1e-300))))


_TRIL = np.tril_indices(4)
_DIAG = _TRIL[0] == _TRIL[1]
_OFF = ~_DIAG
_EXCHANGE = np.eye(4)[::-1]


def _params_to_t(x: np.ndarray) -> np.ndarray:
    t = np.zeros((4, 4), dtype=complex)
    vals = np.zeros(10, dtype=complex)
    vals[_DIAG] = x[:4]
    vals[_OFF] = x[4:10] + 1j * x[10:16]
    t[_TRIL] = vals
    return t


def _t_to_params(t: np.ndarray) -> np.ndarray:
    vals = t[_TRIL]
    return np.concatenate([vals[_DIAG].real, vals[_OFF].real, vals[_OFF].imag])


def rho_from_params(x: np.ndarray) -> np.ndarray:
    t = _params_to_t(x)
    a = t.conj().T @ t
    return a / np.trace(a).real


def params_from_rho(rho: np.ndarray, mix: float = 1e-3) -> np.ndarray:
    """Lower-triangular T with T^dag T = rho (slightly mixed for full rank)."""
    a = (1 - mix) * psd_project(rho) + mix * np.eye(4) / 4
    chol = np.linalg.cholesky(_EXCHANGE @ a @ _EXCHANGE)
    t = _EXCHANGE @ chol.conj().T @ _EXCHANGE
    return _t_to_params(t)


@dataclass
class MleResult:
    rho: np.ndarray
    log_likelihood: float
    n_iter: int
    history: list[float] = field(default_factory=list)
    message: str = ""


def mle_reconstruct(
    counts: CountsTable,
    c_tomo: float,
    start: np.ndarray | None = None,
    max_iter: int = MAX_ITER,
    full_output: bool = False,
):
    """Maximum-likelihood physical state for ``counts``.

    ``start`` optionally warm-starts from a density matrix; otherwise the
    PSD-projected linear estimate is used.  Raises ConvergenceError when the
    iteration cap is reached before the gain per step drops below 1e-10.
    """
    _check_contrast(c_tomo)
    n = _smoothed(counts)
    total = n.sum()
    if total <= 0:
        raise ValueError("no counts to reconstruct from")
    n_flat = n.reshape(-1)
    used = n_flat > 0
    n_used = n_flat[used]
    e_used = _povm_matrices(float(c_tomo)).reshape(-1, 4, 4)[used]
    e_flat_t = e_used.reshape(len(n_used), 16).T  # p = rho.T.ravel() @ e_flat_t
    eye = np.eye(4)
    last: dict = {}

    def objective(x):
        t = _params_to_t(x)
        a = t.conj().T @ t
        tr = np.trace(a).real
        rho = a / tr
        p = np.maximum((rho.T.reshape(16) @ e_flat_t).real, 1e-300)
        ll = float(n_used @ np.log(p))
        g = np.tensordot(n_used / p, e_used, axes=1)
        k = (g - np.trace(g @ rho).real * eye) / tr
        kt = (k @ t.conj().T).T  # kt[i, j] = (K T^dag)_{ji}
        grad_vals = 2 * kt[_TRIL]
        grad = np.concatenate([grad_vals[_DIAG].real, grad_vals[_OFF].real, -grad_vals[_OFF].imag])
        last["x"], last["ll"] = x.copy(), ll
        return -ll / total, -grad / total

    def record(xk):
        if "x" in last and np.array_equal(xk, last["x"]):
            history.append(last["ll"])
        else:
            history.append(-objective(xk)[0] * total)

    if start is None:
        start = psd_project(np.einsum("k,kij->ij", linear_estimate(counts, c_tomo), PAULI_MATRICES) / 4)
    x0 = params_from_rho(start)
    history: list[float] = []

    res = minimize(
        objective,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": max_iter, "ftol": LL_GAIN_TOL / total, "gtol": 1e-12, "maxcor": 20},
    )
    if res.nit >= max_iter:
        raise ConvergenceError(f"no convergence after {res.nit} iterations: {res.message}")
    rho = rho_from_params(res.x)
    rho = (rho + rho.conj().T) / 2
    rho = rho / np.trace(rho).real
    out = MleResult(rho=rho, log_likelihood=-float(res.fun) * total, n_iter=int(res.nit), history=history, message=str(res.message))
    return out if full_output else out.rho


def write_counts_csv(path: str | Path, counts: CountsTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting_a", "setting_b", "n_gg", "n_ge", "n_eg", "n_ee"])
        for st, row in zip(SETTINGS, counts.counts):
            w.writerow([st.rot_a, st.rot_b, *(int(v) for v in row)])


def read_counts_csv(path: str | Path) -> CountsTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    lookup = {(r["setting_a"], r["setting_b"]): r for r in rows}
    counts = np.zeros((len(SETTINGS), 4), dtype=np.int64)
    for s, st in enumerate(SETTINGS):
        r = lookup.get((st.rot_a, st.rot_b))
        if r is None:
            raise ValueError(f"{path}: missing setting {st.rot_a},{st.rot_b}")
        counts[s] = [int(r[f"n_{o}"]) for o in OUTCOME_LABELS]
    return CountsTable(counts)


def state_record(rho: np.ndarray) -> dict:
    pv = pauli_expectations(rho)
    return {
        "pauli": {lbl: round(float(v), 12) for lbl, v in zip(PAULI_LABELS, pv)},
        "eigenvalues": [round(float(v), 12) for v in np.linalg.eigvalsh(rho)],
    }


def write_state_json(path: str | Path, rho: np.ndarray) -> None:
    Path(path).write_text(json.dumps(state_record(rho), indent=2, sort_keys=True) + "\n")
