"""Discord, Xi-rotation marginalization and bootstrap bands.

Discord is minimised over projective measurements on one side using the Bloch
form of a two-qubit state: for a measurement along unit vector ``n`` on Alice,
outcome probabilities are ``(1 +- n.a)/2`` and Bob's conditional Bloch vectors
are ``(b +- T^t n) / (1 +- n.a)``.

Marginalization works directly on Pauli vectors.  The local Z rotation
``exp(i Z Xi Q)`` turns each qubit's (X, Y) Bloch components by ``-2 Xi Q``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .grid import DEFAULT_MIN_SHOTS, ConditionalGrid
from .quantum_core import (
    PAULI_MATRICES,
    binary_entropy,
    check_density_matrix,
    pauli_expectations,
    partial_trace,
    qubit_entropy_from_bloch,
    von_neumann_entropy,
)
from .tomography import CountsTable, mle_reconstruct

log = logging.getLogger(__name__)

NEGATIVE_CLAMP = -1e-9
GRID_THETA = 24
GRID_PHI = 48
N_STARTS = 3
XI_SPAN = 3.0
XI_STEP = 0.05


class DiscordOptimizationError(RuntimeError):
    """Minimisation of the conditional entropy failed."""


class FlatObjectiveError(RuntimeError):
    """The purity objective shows no dependence on Xi."""


# ---------------------------------------------------------------- discord


def _bloch(pv: np.ndarray, side: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(measured-side Bloch vector, other-side Bloch vector, correlation matrix)."""
    m = np.asarray(pv, dtype=float).reshape(4, 4)
    a, b, t = m[1:, 0], m[0, 1:], m[1:, 1:]
    if side == "A":
        return a, b, t
    if side == "B":
        return b, a, t.T
    raise ValueError(f"side must be 'A' or 'B', got {side!r}")


def _directions(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)


def conditional_entropy(theta, phi, pv: np.ndarray, side: str = "A") -> np.ndarray:
    """Average entropy of the unmeasured qubit after a projective measurement
    along (theta, phi) on ``side``.  Vectorised over theta, phi."""
    a, b, t = _bloch(pv, side)
    n = _directions(theta, phi)
    na = n @ a
    tn = n @ t
    out = 0.0
    for sign in (1.0, -1.0):
        p = (1 + sign * na) / 2
        denom = np.where(p > 1e-15, 2 * p, 1.0)
        r = (b + sign * tn) / denom[..., None]
        out = out + np.where(p > 1e-15, p * qubit_entropy_from_bloch(r), 0.0)
    return out


def _h(p: float) -> float:
    q = 1.0 - p
    out = 0.0
    if p > 0:
        out -= p * math.log2(p)
    if q > 0:
        out -= q * math.log2(q)
    return out


def _scalar_entropy(theta: float, phi: float, a, b, t) -> float:
    """Scalar fast path of ``conditional_entropy`` (a, b, t as nested tuples)."""
    st = math.sin(theta)
    n = (st * math.cos(phi), st * math.sin(phi), math.cos(theta))
    na = n[0] * a[0] + n[1] * a[1] + n[2] * a[2]
    tn = [n[0] * t[0][k] + n[1] * t[1][k] + n[2] * t[2][k] for k in range(3)]
    out = 0.0
    for sign in (1.0, -1.0):
        p = (1 + sign * na) / 2
        if p <= 1e-15:
            continue
        r = math.sqrt(sum((b[k] + sign * tn[k]) ** 2 for k in range(3))) / (2 * p)
        out += p * _h((1 + min(r, 1.0)) / 2)
    return out


def mutual_information(rho: np.ndarray) -> float:
    """S(rho_A) + S(rho_B) - S(rho) in bits."""
    return (
        von_neumann_entropy(partial_trace(rho, "A"))
        + von_neumann_entropy(partial_trace(rho, "B"))
        - von_neumann_entropy(rho)
    )


@dataclass(frozen=True)
class OptConfig:
    n_theta: int = GRID_THETA
    n_phi: int = GRID_PHI
    n_starts: int = N_STARTS
    fatol: float = 1e-9
    xatol: float = 1e-7


def min_conditional_entropy(pv: np.ndarray, side: str = "A", cfg: OptConfig = OptConfig()) -> tuple[float, float, float]:
    """Coarse (theta, phi) grid followed by Nelder-Mead from the best grid points.

    Returns (minimum, theta, phi).
    """
    theta = (np.arange(cfg.n_theta) + 0.5) * np.pi / cfg.n_theta
    phi = np.arange(cfg.n_phi) * 2 * np.pi / cfg.n_phi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    vals = conditional_entropy(tt, pp, pv, side).ravel()
    order = np.argsort(vals, kind="stable")[: cfg.n_starts]
    best = (float(vals[order[0]]), float(tt.ravel()[order[0]]), float(pp.ravel()[order[0]]))
    incumbent = best[0]

    a, b, t = (v.tolist() for v in _bloch(pv, side))

    def f(x):
        return _scalar_entropy(x[0], x[1], a, b, t)

    for k in order:
        res = minimize(
            f,
            np.array([tt.ravel()[k], pp.ravel()[k]]),
            method="Nelder-Mead",
            options={"xatol": cfg.xatol, "fatol": cfg.fatol, "maxiter": 2000},
        )
        if res.fun < best[0]:
            best = (float(res.fun), float(res.x[0]), float(res.x[1]))
    if best[0] > incumbent + 1e-12:
        raise DiscordOptimizationError("refinement ended above the grid incumbent")
    return best


def classical_correlation_pauli(pv: np.ndarray, side: str = "A", cfg: OptConfig = OptConfig()) -> float:
    _, b, _ = _bloch(pv, side)
    s_other = float(binary_entropy((1 + min(np.linalg.norm(b), 1.0)) / 2))
    return s_other - min_conditional_entropy(pv, side, cfg)[0]


def classical_correlation(rho: np.ndarray, side: str = "A", cfg: OptConfig = OptConfig()) -> float:
    """J: entropy of the unmeasured qubit minus its minimal conditional entropy."""
    return classical_correlation_pauli(pauli_expectations(check_density_matrix(rho)), side, cfg)


def _clamp(d: float) -> float:
    if d < 0:
        if d < NEGATIVE_CLAMP:
            raise DiscordOptimizationError(f"negative discord {d:.3g}")
        return 0.0
    return d


def discord_pauli(pv: np.ndarray, side: str = "A", cfg: OptConfig = OptConfig()) -> float:
    rho = np.einsum("k,kij->ij", pv, PAULI_MATRICES) / 4
    return _clamp(mutual_information(rho) - classical_correlation_pauli(pv, side, cfg))


def discord(rho: np.ndarray, side: str = "A", cfg: OptConfig = OptConfig()) -> float:
    """Discord relative to ``side`` in bits (the measured party)."""
    rho = check_density_matrix(rho)
    return discord_pauli(pauli_expectations(rho), side, cfg)


# ---------------------------------------------------------------- Xi rotation


@dataclass(frozen=True)
class XiPair:
    xi_a: float
    xi_b: float

    def __post_init__(self):
        if not (np.isfinite(self.xi_a) and np.isfinite(self.xi_b)):
            raise ValueError("Xi components must be finite")

    def as_list(self) -> list[float]:
        return [float(self.xi_a), float(self.xi_b)]


def xi_unitary(q_m: float, xi: XiPair) -> tuple[np.ndarray, np.ndarray]:
    ua = np.diag(np.exp(1j * xi.xi_a * q_m * np.array([1.0, -1.0])))
    ub = np.diag(np.exp(1j * xi.xi_b * q_m * np.array([1.0, -1.0])))
    return ua, ub


def rotate_by_xi(rho: np.ndarray, q_m: float, xi: XiPair) -> np.ndarray:
    ua, ub = xi_unitary(q_m, xi)
    u = np.kron(ua, ub)
    return u @ rho @ u.conj().T


# Helicity basis per qubit: (I, X + iY, X - iY, Z); component s rotates as exp(i s phi).
_W = np.array([[1, 0, 0, 0], [0, 1, 1j, 0], [0, 1, -1j, 0], [0, 0, 0, 1]])
_W_INV = np.linalg.inv(_W)
_HEL = np.array([0.0, 1.0, -1.0, 0.0])
_HEL_NORM = np.array([1.0, 0.5, 0.5, 1.0])
_HEL_NORM2 = np.outer(_HEL_NORM, _HEL_NORM)


def _to_helicity(pv: np.ndarray) -> np.ndarray:
    m = np.asarray(pv, dtype=float).reshape(*np.shape(pv)[:-1], 4, 4)
    return np.einsum("ab,...bc,dc->...ad", _W, m, _W)


def _from_helicity(mh: np.ndarray) -> np.ndarray:
    m = np.einsum("ab,...bc,dc->...ad", _W_INV, mh, _W_INV).real
    return m.reshape(*m.shape[:-2], 16)


def rotate_pauli(pv: np.ndarray, q_m, xi: XiPair) -> np.ndarray:
    """Pauli-space version of ``rotate_by_xi``; broadcasts over leading axes."""
    q = np.asarray(q_m, dtype=float)[..., None]
    pa = np.exp(-2j * xi.xi_a * q * _HEL)
    pb = np.exp(-2j * xi.xi_b * q * _HEL)
    mh = _to_helicity(pv) * pa[..., :, None] * pb[..., None, :]
    return _from_helicity(mh)


@dataclass
class Marginal:
    columns: np.ndarray  # I-bin indices kept
    i_centers: np.ndarray
    pauli: np.ndarray  # (n_kept, 16)
    weights: np.ndarray  # P(I_m) over kept columns, sums to 1
    skipped: list[int] = field(default_factory=list)

    @property
    def states(self) -> np.ndarray:
        return np.einsum("ck,kij->cij", self.pauli, PAULI_MATRICES) / 4


def _column_weights(grid: ConditionalGrid) -> np.ndarray:
    return grid.used_weights()


def marginalize_pauli(grid: ConditionalGrid, xi: XiPair) -> Marginal:
    w = _column_weights(grid)
    col_w = w.sum(axis=1)
    keep = np.nonzero(col_w > 0)[0]
    skipped = [int(i) for i in np.nonzero(col_w <= 0)[0]]
    q = grid.grid.q_centers
    rot = rotate_pauli(grid.pauli[keep], q[None, :], xi)
    pv = np.einsum("cq,cqk->ck", w[keep], rot) / col_w[keep, None]
    return Marginal(
        columns=keep,
        i_centers=grid.grid.i_centers[keep],
        pauli=pv,
        weights=col_w[keep] / col_w[keep].sum() if keep.size else col_w[keep],
        skipped=skipped,
    )


def marginalize(grid: ConditionalGrid, xi: XiPair) -> list[tuple[float, np.ndarray]]:
    """Per I_m column, the P(Q_m)-weighted average of Xi-rotated bin states."""
    m = marginalize_pauli(grid, xi)
    if m.skipped:
        log.info("marginalize: %d empty I_m columns skipped", len(m.skipped))
    return list(zip(m.i_centers.tolist(), m.states))


def _purity_from_pauli(pv: np.ndarray) -> np.ndarray:
    return np.sum(pv**2, axis=-1) / 4


def purity_objective(grid: ConditionalGrid, xi: XiPair) -> float:
    """gamma_Xi = sum_I P(I) Tr[rho_M(I)^2]."""
    m = marginalize_pauli(grid, xi)
    if m.columns.size == 0:
        raise ValueError("grid has no reconstructed bins")
    return float(m.weights @ _purity_from_pauli(m.pauli))


class _PurityLandscape:
    """Fast evaluation of gamma_Xi over many Xi for a fixed grid."""

    def __init__(self, grid: ConditionalGrid):
        w = _column_weights(grid)
        col_w = w.sum(axis=1)
        keep = col_w > 0
        if not keep.any():
            raise ValueError("grid has no reconstructed bins")
        self.q = grid.grid.q_centers
        self.wm = w[keep][..., None, None] * _to_helicity(grid.pauli[keep])  # (c, q, 4, 4)
        self.col_w = col_w[keep]
        self.p_col = self.col_w / self.col_w.sum()

    def gamma(self, xi_a: float, xi_b: np.ndarray) -> np.ndarray:
        xi_b = np.atleast_1d(np.asarray(xi_b, dtype=float))
        pa = np.exp(-2j * xi_a * self.q[:, None] * _HEL)  # (q, 4)
        pb = np.exp(-2j * xi_b[:, None, None] * self.q[None, :, None] * _HEL)  # (x, q, 4)
        wa = self.wm * pa[None, :, :, None]
        marg = np.einsum("cqab,xqb->xcab", wa, pb) / self.col_w[None, :, None, None]
        pur = np.einsum("xcab,ab->xc", np.abs(marg) ** 2, _HEL_NORM2) / 4
        return pur @ self.p_col


def purity_landscape(grid: ConditionalGrid, span: float = XI_SPAN, step: float = XI_STEP):
    """gamma on the square Xi grid; returns (axis, gamma[a, b])."""
    axis = np.round(np.arange(-span, span + step / 2, step), 12)
    land = _PurityLandscape(grid)
    gam = np.stack([land.gamma(xa, axis) for xa in axis])
    return axis, gam


def optimize_xi(
    grid: ConditionalGrid,
    span: float = XI_SPAN,
    step: float = XI_STEP,
    start: XiPair | None = None,
) -> XiPair:
    """Xi maximising the marginal purity.

    Without ``start`` a coarse grid over [-span, span]^2 seeds a Nelder-Mead
    refinement; with ``start`` only the local refinement runs.
    """
    land = _PurityLandscape(grid)
    if start is None:
        axis, gam = purity_landscape(grid, span, step)
        spread = gam.max() - gam.min()
        if spread <= 1e-12 * max(gam.max(), 1e-300):
            raise FlatObjectiveError("purity does not depend on Xi")
        ia, ib = np.unravel_index(np.argmax(gam), gam.shape)
        x0 = np.array([axis[ia], axis[ib]])
        incumbent = gam[ia, ib]
    else:
        x0 = np.array([start.xi_a, start.xi_b])
        incumbent = land.gamma(x0[0], x0[1])[0]

    res = minimize(
        lambda x: -float(land.gamma(x[0], x[1])[0]),
        x0,
        method="Nelder-Mead",
        options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 1000, "initial_simplex": _simplex(x0, step / 2)},
    )
    best = res.x if -res.fun >= incumbent else x0
    return XiPair(float(best[0]), float(best[1]))


def _simplex(x0: np.ndarray, h: float) -> np.ndarray:
    return np.array([x0, x0 + [h, 0.0], x0 + [0.0, h]])


def optimize_xi_or_zero(grid: ConditionalGrid, **kw) -> tuple[XiPair, bool]:
    """``optimize_xi`` with the fall-back to Xi = (0, 0) on a flat objective."""
    try:
        return optimize_xi(grid, **kw), False
    except FlatObjectiveError:
        return XiPair(0.0, 0.0), True


def average_purity(grid: ConditionalGrid) -> float:
    """gamma_avg = sum P(I, Q) Tr[rho(I, Q)^2] over reconstructed bins."""
    w = _column_weights(grid)
    if w.sum() <= 0:
        raise ValueError("grid has no reconstructed bins")
    return float(np.sum(w * _purity_from_pauli(grid.pauli)) / w.sum())


def purity_reduction(grid: ConditionalGrid, xi_opt: XiPair) -> float:
    """r = 1 - gamma_Xi_opt / gamma_avg."""
    return 1.0 - purity_objective(grid, xi_opt) / average_purity(grid)


# ---------------------------------------------------------------- results and bootstrap


@dataclass(frozen=True)
class BootstrapConfig:
    n_resamples: int = 2000
    percentile: float = 95.0
    seed: int = 0
    min_records: int = DEFAULT_MIN_SHOTS

    def violations(self, prefix: str = "bootstrap") -> list[tuple[str, str]]:
        out = []
        if self.n_resamples < 1:
            out.append((f"{prefix}.n_resamples", "must be >= 1"))
        if not 50 < self.percentile < 100:
            out.append((f"{prefix}.percentile", "must lie in (50, 100)"))
        if self.min_records < 1:
            out.append((f"{prefix}.min_records", "must be >= 1"))
        return out


@dataclass
class DiscordResult:
    lam: float
    i_m_center: float
    d_alice: float
    d_bob: float
    ci_a: tuple[float, float]
    ci_b: tuple[float, float]
    d_avg_alice: float | None = None
    d_avg_bob: float | None = None
    gamma_opt: float | None = None
    gamma_avg: float | None = None
    r: float | None = None
    xi_opt: tuple[float, float] | None = None
    band_extended: bool = False

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["lambda"] = rec.pop("lam")
        rec["ci_a"] = list(self.ci_a)
        rec["ci_b"] = list(self.ci_b)
        rec["xi_opt"] = list(self.xi_opt) if self.xi_opt is not None else None
        return rec


def column_discord(marg: Marginal, cfg: OptConfig = OptConfig()) -> np.ndarray:
    """(n_columns, 2) discord relative to Alice and Bob of each marginal state."""
    return np.array([[discord_pauli(pv, "A", cfg), discord_pauli(pv, "B", cfg)] for pv in marg.pauli])


def bin_averaged_discord(grid: ConditionalGrid, cfg: OptConfig = OptConfig()) -> np.ndarray:
    """(ni, 2) P(Q|I)-weighted mean of per-bin discord, NaN for empty columns."""
    w = grid.used_weights()
    ni, _ = grid.shape
    out = np.full((ni, 2), np.nan)
    for i in range(ni):
        idx = np.nonzero(w[i] > 0)[0]
        if idx.size == 0:
            continue
        d = np.array([[discord_pauli(grid.pauli[i, j], s, cfg) for s in "AB"] for j in idx])
        out[i] = w[i, idx] @ d / w[i, idx].sum()
    return out


def reconstruct_bins(
    counts: np.ndarray,
    c_tomo: float,
    min_records: int = DEFAULT_MIN_SHOTS,
    start: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, list[tuple[tuple[int, ...], str]]]:
    """MLE for every cell of a (..., 9, 4) count array holding >= ``min_records`` records.

    Returns (pauli (..., 16), reconstructed mask, failures).
    """
    lead = counts.shape[:-2]
    totals = counts.sum(axis=(-2, -1))
    pauli = np.zeros(lead + (16,))
    pauli[..., 0] = 1.0
    done = np.zeros(lead, dtype=bool)
    failures = []
    for idx in zip(*np.nonzero(totals >= min_records)):
        warm = None
        if start is not None:
            warm = np.einsum("k,kab->ab", start[idx], PAULI_MATRICES) / 4
        try:
            rho = mle_reconstruct(CountsTable(counts[idx]), c_tomo, start=warm)
        except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            failures.append((tuple(int(i) for i in idx), str(exc)))
            continue
        pauli[idx] = pauli_expectations(rho)
        done[idx] = True
    return pauli, done, failures


def reconstruct_grid(
    grid: ConditionalGrid,
    c_tomo: float,
    min_records: int = DEFAULT_MIN_SHOTS,
    tomo_counts: np.ndarray | None = None,
    start: np.ndarray | None = None,
) -> ConditionalGrid:
    """MLE for every bin holding at least ``min_records`` tomography records."""
    counts = grid.tomo_counts if tomo_counts is None else tomo_counts
    pauli, done, failures = reconstruct_bins(counts, c_tomo, min_records, start)
    out = grid.with_pauli(pauli, done)
    out.failures = [(i, j, msg) for (i, j), msg in failures]
    return out


def _percentile_band(samples: np.ndarray, pct: float) -> tuple[np.ndarray, np.ndarray]:
    tail = (100 - pct) / 2
    return np.percentile(samples, tail, axis=0), np.percentile(samples, 100 - tail, axis=0)


def _resample_counts(counts: np.ndarray, totals: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros_like(counts)
    flat = counts[mask].reshape(-1, 36).astype(float)
    n = totals[mask].astype(np.int64)
    out[mask] = rng.multinomial(n, flat / n[:, None]).reshape(-1, 9, 4)
    return out


def _one_resample(args) -> np.ndarray:
    grid, c_tomo, xi_opt, seed, index, min_records, ni, opt = args
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))
    counts = grid.tomo_counts
    totals = counts.sum(axis=(2, 3))
    mask = grid.reconstructed & (totals >= min_records)
    boot_counts = _resample_counts(counts, totals, mask, rng)
    g = reconstruct_grid(grid, c_tomo, min_records, tomo_counts=boot_counts, start=grid.pauli)
    g.reconstructed &= mask
    try:
        xi = optimize_xi(g, start=xi_opt)
    except ValueError:
        xi = xi_opt
    marg = marginalize_pauli(g, xi)
    out = np.full((ni, 2), np.nan)
    out[marg.columns] = column_discord(marg, opt)
    return out


def bootstrap_discord(
    grid: ConditionalGrid,
    c_tomo: float,
    xi_opt: XiPair,
    cfg: BootstrapConfig = BootstrapConfig(),
    workers: int = 1,
    opt: OptConfig = OptConfig(),
) -> np.ndarray:
    """Discord of marginal states for each bootstrap resample, shape (n_resamples, ni, 2).

    Each resample draws every bin's tomography records with replacement,
    reruns the MLE (warm-started at the point estimate), refines Xi locally
    from ``xi_opt`` and recomputes the per-column discord.  Bins with fewer
    than ``cfg.min_records`` records are left out.
    """
    bad = cfg.violations()
    if bad:
        raise ValueError("; ".join(f"{p}: {m}" for p, m in bad))
    ni, _ = grid.shape
    jobs = [(grid, c_tomo, xi_opt, cfg.seed, k, cfg.min_records, ni, opt) for k in range(cfg.n_resamples)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_resample, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_one_resample(j) for j in jobs]
    return np.stack(results)


def discord_results(
    grid: ConditionalGrid,
    xi_opt: XiPair,
    boot: np.ndarray | None,
    cfg: BootstrapConfig = BootstrapConfig(),
    opt: OptConfig = OptConfig(),
    with_bin_average: bool = True,
) -> list[DiscordResult]:
    """Point estimates, percentile bands and purity diagnostics per I_m column.

    A band that excludes its own point estimate is widened to include it and
    flagged with ``band_extended``.
    """
    marg = marginalize_pauli(grid, xi_opt)
    point = column_discord(marg, opt)
    gamma_opt = purity_objective(grid, xi_opt)
    gamma_avg = average_purity(grid)
    avg = bin_averaged_discord(grid, opt) if with_bin_average else None
    if boot is not None:
        sub = boot[:, marg.columns, :]
        lo, hi = _percentile_band(sub, cfg.percentile)
    else:
        lo, hi = point.copy(), point.copy()
    out = []
    for k, col in enumerate(marg.columns):
        ext = bool(np.any(point[k] < lo[k]) or np.any(point[k] > hi[k]))
        l = np.minimum(lo[k], point[k])
        h = np.maximum(hi[k], point[k])
        out.append(
            DiscordResult(
                lam=float(grid.lam),
                i_m_center=float(grid.grid.i_centers[col]),
                d_alice=float(point[k, 0]),
                d_bob=float(point[k, 1]),
                ci_a=(float(l[0]), float(h[0])),
                ci_b=(float(l[1]), float(h[1])),
                d_avg_alice=None if avg is None else float(avg[col, 0]),
                d_avg_bob=None if avg is None else float(avg[col, 1]),
                gamma_opt=gamma_opt,
                gamma_avg=gamma_avg,
                r=1.0 - gamma_opt / gamma_avg,
                xi_opt=(xi_opt.xi_a, xi_opt.xi_b),
                band_extended=ext,
            )
        )
    return out
