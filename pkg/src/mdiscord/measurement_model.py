"""Conditional two-qubit states after a weak joint (ZI + IZ) measurement.

Outcomes ``(I_m, Q_m)`` are expressed in units of the per-quadrature noise
``sigma_m``.  The pointer for ``|gg>`` sits at ``+I_bar``, the odd manifold at
``0`` and ``|ee>`` at ``-I_bar`` with ``I_bar = sigma_m sqrt(2 lambda)``.

The printed closed forms take their outcome arguments in log-likelihood
coordinates, ``x = I_m I_bar / sigma_m**2`` and ``q = Q_m I_bar / sigma_m**2``,
so that no measurement (``lambda = 0``) leaves every outcome equivalent.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .quantum_core import (
    PAULI_INDEX,
    PAULI_MATRICES,
    PSD_FLOOR,
    InvalidStateError,
    pauli_expectations,
)

CLOSED_FORM_LABELS = ("XX", "YY", "XY", "YX", "ZZ")
# Components the closed forms fix; everything else comes from the generative update.
MODEL_COMPLETED_LABELS = tuple(
    lbl for lbl in PAULI_INDEX if lbl not in CLOSED_FORM_LABELS and lbl != "II"
)
MATCH_TOL = 1e-6

# Pointer I-means in units of I_bar for |gg>, |ge>, |eg>, |ee>.
_POINTER_SIGN = np.array([1.0, 0.0, 0.0, -1.0])


@dataclass(frozen=True)
class ModelParams:
    c_t2_alice: float = 0.86
    c_t2_bob: float = 0.85
    c_tomo: float = 0.90
    eta_a: float = 0.53
    eta_b: float = 0.42
    xi_a: float = 0.27
    xi_b: float = 1.02
    q_bar: float = 0.0
    sigma_m: float = 1.0

    def violations(self, prefix: str = "model") -> list[tuple[str, str]]:
        out = []
        for name in ("c_t2_alice", "c_t2_bob", "c_tomo"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                out.append((f"{prefix}.{name}", f"contrast {v} outside [0, 1]"))
        for name in ("eta_a", "eta_b"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                out.append((f"{prefix}.{name}", f"efficiency {v} outside (0, 1]"))
        if not self.sigma_m > 0:
            out.append((f"{prefix}.sigma_m", f"sigma_m {self.sigma_m} must be > 0"))
        for name in ("xi_a", "xi_b", "q_bar"):
            if not np.isfinite(getattr(self, name)):
                out.append((f"{prefix}.{name}", "must be finite"))
        return out

    def validate(self) -> "ModelParams":
        bad = self.violations()
        if bad:
            raise ValueError("; ".join(f"{p}: {m}" for p, m in bad))
        return self

    def pointer_separation(self, lam: float) -> float:
        return separation_from_strength(lam, self.sigma_m)

    def to_dict(self) -> dict:
        return asdict(self)


DEVICE_PARAMS = ModelParams()


@dataclass(frozen=True)
class Outcome:
    i_m: float
    q_m: float


@dataclass
class OutcomeBatch:
    i_m: np.ndarray
    q_m: np.ndarray
    seed: int
    lam: float
    component: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.i_m)

    def outcomes(self) -> list[Outcome]:
        return [Outcome(float(i), float(q)) for i, q in zip(self.i_m, self.q_m)]


def _check_lambda(lam: float) -> None:
    if lam < 0 or not np.isfinite(lam):
        raise ValueError(f"measurement strength must be finite and >= 0, got {lam}")


def contrast(lam: float, p: ModelParams) -> float:
    """Two-qubit fringe contrast C(lambda) including the inefficiency decay."""
    _check_lambda(lam)
    decay = (1 - p.eta_a) / p.eta_a + (1 - p.eta_b) / p.eta_b
    return p.c_t2_alice * p.c_t2_bob * p.c_tomo * float(np.exp(-decay * lam / 2))


def strength_from_separation(i_bar: float, sigma_m: float) -> float:
    if sigma_m <= 0:
        raise ValueError("sigma_m must be positive")
    return i_bar**2 / (2 * sigma_m**2)


def separation_from_strength(lam: float, sigma_m: float) -> float:
    _check_lambda(lam)
    if sigma_m <= 0:
        raise ValueError("sigma_m must be positive")
    return sigma_m * float(np.sqrt(2 * lam))


def stark_phases(lam: float, p: ModelParams) -> tuple[float, float]:
    """(Theta_minus, Theta_plus); Theta_minus uses q_bar in likelihood coordinates."""
    k = p.pointer_separation(lam) / p.sigma_m**2
    theta_minus = k * p.q_bar + (p.xi_a - p.xi_b) * lam
    theta_plus = (p.xi_a + p.xi_b) * lam
    return theta_minus, theta_plus


def likelihood_coordinates(lam, i_m, q_m, p: ModelParams):
    """Map outcomes in sigma units to the closed-form arguments (x, q)."""
    k = p.pointer_separation(lam) / p.sigma_m**2
    return k * np.asarray(i_m, dtype=float), k * np.asarray(q_m, dtype=float)


def closed_form_components(lam: float, i_m, q_m, p: ModelParams) -> dict[str, np.ndarray]:
    """Vectorised closed-form <XX>, <YY>, <XY>, <YX>, <ZZ> at outcomes (i_m, q_m)."""
    _check_lambda(lam)
    x, q = likelihood_coordinates(lam, i_m, q_m, p)
    c = contrast(lam, p)
    theta_minus, theta_plus = stark_phases(lam, p)
    el = np.exp(-lam)
    # e^-L cosh(x) overflows for |x| > ~700; the ratio saturates long before.
    ech = el * np.cosh(np.clip(x, -700, 700))
    den = ech + 1
    fringe_c = np.cos(q - theta_minus)
    fringe_s = np.sin(q - theta_minus)
    return {
        "XX": c * (-el * np.cos(theta_plus) + fringe_c) / den,
        "YY": c * (el * np.cos(theta_plus) + fringe_c) / den,
        "XY": c * (el * np.sin(theta_plus) - fringe_s) / den,
        "YX": c * (el * np.sin(theta_plus) + fringe_s) / den,
        "ZZ": p.c_tomo * (ech - 1) / den,
    }


def conditional_pauli_closed_form(lam: float, outcome: Outcome, p: ModelParams) -> dict[str, float]:
    comps = closed_form_components(lam, outcome.i_m, outcome.q_m, p)
    return {k: float(v) for k, v in comps.items()}


def _local_contrast_factors(lam: float, p: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-qubit Bloch scale factors (x, y, z) of the local noise channels.

    Each qubit gets depolarisation sqrt(C_tomo), T2 dephasing C_T2 and the
    inefficiency dephasing exp(-(1 - eta)/eta * lambda / 2) on its X, Y axes.
    """
    s = np.sqrt(p.c_tomo)
    da = np.exp(-(1 - p.eta_a) / p.eta_a * lam / 2)
    db = np.exp(-(1 - p.eta_b) / p.eta_b * lam / 2)
    fa = np.array([s * p.c_t2_alice * da, s * p.c_t2_alice * da, s])
    fb = np.array([s * p.c_t2_bob * db, s * p.c_t2_bob * db, s])
    return fa, fb


def _pauli_scale(lam: float, p: ModelParams) -> np.ndarray:
    fa, fb = _local_contrast_factors(lam, p)
    one = {"I": 1.0}
    a = {**one, "X": fa[0], "Y": fa[1], "Z": fa[2]}
    b = {**one, "X": fb[0], "Y": fb[1], "Z": fb[2]}
    return np.array([a[lbl[0]] * b[lbl[1]] for lbl in PAULI_INDEX])


def conditional_states(lam: float, i_m, q_m, p: ModelParams) -> np.ndarray:
    """Vectorised conditional density matrices, shape ``(..., 4, 4)``.

    Single-shot back-action on |++>: a Kraus operator diagonal in the
    computational basis with Gaussian pointer amplitudes and outcome-dependent
    phases, followed by local contrast channels.  The pi/2 frame offset on each
    qubit is the one fixed constant needed to land on the printed closed forms.
    """
    _check_lambda(lam)
    i_m = np.asarray(i_m, dtype=float)
    q_m = np.asarray(q_m, dtype=float)
    i_bar = p.pointer_separation(lam)
    sig = p.sigma_m
    x, q = likelihood_coordinates(lam, i_m, q_m, p)
    theta_minus, theta_plus = stark_phases(lam, p)

    # Log amplitudes relative to the odd pointer, which cancels on normalisation:
    # |a_s|^2 / |a_odd|^2 = exp(+-x - lambda) for gg / ee.
    shift = (i_bar / (2 * sig)) ** 2  # = lambda / 2
    log_amp = np.stack(
        [0.5 * x - shift, np.zeros_like(x), np.zeros_like(x), -0.5 * x - shift],
        axis=-1,
    )
    log_amp = log_amp - np.max(log_amp, axis=-1, keepdims=True)
    odd_phase = (theta_minus - q) / 2
    even_phase = (theta_plus + np.pi) / 2
    phase = np.stack(
        [np.full_like(x, even_phase), odd_phase, -odd_phase, np.full_like(x, -even_phase)],
        axis=-1,
    )
    psi = np.exp(log_amp + 1j * phase)
    psi = psi / np.linalg.norm(psi, axis=-1, keepdims=True)
    rho = psi[..., :, None] * psi[..., None, :].conj()

    pv = pauli_expectations(rho) * _pauli_scale(lam, p)
    return np.einsum("...k,kij->...ij", pv, PAULI_MATRICES) / 4


def conditional_state(lam: float, outcome: Outcome, p: ModelParams, check: bool = True) -> np.ndarray:
    """Full conditional state at one outcome; verified against the closed forms."""
    rho = conditional_states(lam, outcome.i_m, outcome.q_m, p)
    if check:
        lam_min = np.linalg.eigvalsh(rho).min()
        if lam_min < PSD_FLOOR:
            raise InvalidStateError(f"conditional state not PSD (min eigenvalue {lam_min:.3g})")
        pv = pauli_expectations(rho)
        ref = conditional_pauli_closed_form(lam, outcome, p)
        worst = max(abs(pv[PAULI_INDEX[k]] - v) for k, v in ref.items())
        if worst > MATCH_TOL:
            raise InvalidStateError(f"generative state departs from closed form by {worst:.3g}")
    return rho


def _rng(seed: int, *stream: int) -> np.random.Generator:
    # Philox is counter based, so (seed, stream...) gives independent shards.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def sample_outcomes(lam: float, n: int, p: ModelParams, seed: int, shard: int = 0) -> OutcomeBatch:
    """i.i.d. outcomes from the equal-weight four-pointer Gaussian mixture."""
    _check_lambda(lam)
    if n < 1:
        raise ValueError("need at least one outcome")
    rng = _rng(seed, shard)
    comp = rng.integers(0, 4, size=n)
    i_bar = p.pointer_separation(lam)
    i_m = _POINTER_SIGN[comp] * i_bar + p.sigma_m * rng.standard_normal(n)
    q_m = p.q_bar + p.sigma_m * rng.standard_normal(n)
    return OutcomeBatch(i_m=i_m, q_m=q_m, seed=seed, lam=lam, component=comp)


def outcome_density(lam: float, i_m, q_m, p: ModelParams) -> np.ndarray:
    """Probability density of the mixture at (i_m, q_m)."""
    i_bar = p.pointer_separation(lam)
    s = p.sigma_m
    i_m = np.asarray(i_m, dtype=float)[..., None]
    g_i = np.exp(-((i_m - _POINTER_SIGN * i_bar) ** 2) / (2 * s**2)) / np.sqrt(2 * np.pi * s**2)
    g_q = np.exp(-((np.asarray(q_m, dtype=float) - p.q_bar) ** 2) / (2 * s**2)) / np.sqrt(2 * np.pi * s**2)
    return g_i.mean(axis=-1) * g_q


@dataclass(frozen=True)
class BinGrid:
    i_edges: np.ndarray
    q_edges: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.i_edges) - 1, len(self.q_edges) - 1

    @property
    def i_centers(self) -> np.ndarray:
        return (self.i_edges[:-1] + self.i_edges[1:]) / 2

    @property
    def q_centers(self) -> np.ndarray:
        return (self.q_edges[:-1] + self.q_edges[1:]) / 2

    def i_index_of(self, value: float) -> int:
        return int(np.clip(np.searchsorted(self.i_edges, value, side="right") - 1, 0, self.shape[0] - 1))

    def q_index_of(self, value: float) -> int:
        return int(np.clip(np.searchsorted(self.q_edges, value, side="right") - 1, 0, self.shape[1] - 1))


def default_grid(lam: float, p: ModelParams, n_bins: int = 51, span: float = 5.0) -> BinGrid:
    """Square-count grid spanning ``span`` sigma beyond the extreme pointer means."""
    i_bar = p.pointer_separation(lam)
    half_i = i_bar + span * p.sigma_m
    half_q = span * p.sigma_m
    return BinGrid(
        i_edges=np.linspace(-half_i, half_i, n_bins + 1),
        q_edges=np.linspace(p.q_bar - half_q, p.q_bar + half_q, n_bins + 1),
    )


def bin_indices(i_m, q_m, grid: BinGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-open bin assignment; out-of-range values clamp into edge bins.

    Returns (i_index, q_index, clamped_mask).
    """
    ni, nq = grid.shape
    ii = np.searchsorted(grid.i_edges, i_m, side="right") - 1
    qq = np.searchsorted(grid.q_edges, q_m, side="right") - 1
    clamped = (ii < 0) | (ii >= ni) | (qq < 0) | (qq >= nq)
    return np.clip(ii, 0, ni - 1), np.clip(qq, 0, nq - 1), clamped


@dataclass
class Histogram:
    grid: BinGrid
    counts: np.ndarray
    n_clamped: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def bin_outcomes(batch: OutcomeBatch, grid: BinGrid) -> Histogram:
    ii, qq, clamped = bin_indices(batch.i_m, batch.q_m, grid)
    counts = np.zeros(grid.shape, dtype=np.int64)
    np.add.at(counts, (ii, qq), 1)
    return Histogram(grid=grid, counts=counts, n_clamped=int(clamped.sum()))
