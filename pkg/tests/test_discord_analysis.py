import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdiscord.discord_analysis import (
    BootstrapConfig,
    DiscordResult,
    FlatObjectiveError,
    XiPair,
    _percentile_band,
    average_purity,
    bootstrap_discord,
    classical_correlation,
    discord,
    discord_results,
    marginalize,
    min_conditional_entropy,
    mutual_information,
    optimize_xi,
    optimize_xi_or_zero,
    purity_objective,
    purity_reduction,
    reconstruct_grid,
    rotate_by_xi,
    rotate_pauli,
)
from mdiscord.grid import ConditionalGrid
from mdiscord.measurement_model import DEVICE_PARAMS, BinGrid, ModelParams, conditional_states, outcome_density
from mdiscord.quantum_core import (
    apply_local_unitary,
    density_matrix_violations,
    ket,
    partial_trace,
    pauli_expectations,
    projector,
    purity,
    state_from_pauli,
    von_neumann_entropy,
)
from mdiscord.tomography import simulate_tomography
from oracles import brute_force_discord, random_state, random_unitary

seeds = st.integers(0, 2**32 - 1)
BELL = projector(np.array([1, 0, 0, 1]) / np.sqrt(2))
ODD = (projector(ket("ge")) + projector(ket("eg"))) / 2
FOUR_TERM = (projector(ket("ge")) + projector(ket("eg")) + projector(ket("-+")) + projector(ket("+-"))) / 4


def theory_grid(lam, p=DEVICE_PARAMS, n=25, span=4.0):
    i_bar = math.sqrt(2 * lam)
    grid = BinGrid(np.linspace(-i_bar - span, i_bar + span, n + 1), np.linspace(-span, span, n + 1))
    ii, qq = np.meshgrid(grid.i_centers, grid.q_centers, indexing="ij")
    w = outcome_density(lam, ii, qq, p)
    return ConditionalGrid.from_states(grid, lam, w / w.sum(), pauli_expectations(conditional_states(lam, ii, qq, p)))


def uniform_grid(pauli, ni=1, nq=None):
    pauli = np.asarray(pauli, dtype=float)
    nq = pauli.shape[1] if nq is None else nq
    grid = BinGrid(np.linspace(-1, 1, ni + 1), np.linspace(-1, 1, nq + 1))
    return ConditionalGrid.from_states(grid, 0.5, np.ones((ni, nq)), pauli)


def random_product(rng):
    return np.kron(random_state_1q(rng), random_state_1q(rng))


def random_state_1q(rng):
    g = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    a = g @ g.conj().T
    return a / np.trace(a).real


def test_mutual_information_examples():
    assert mutual_information(projector(ket("+g"))) == pytest.approx(0, abs=1e-12)
    assert mutual_information(BELL) == pytest.approx(2)
    assert mutual_information(ODD) == pytest.approx(1)


def test_classical_correlation_examples():
    assert classical_correlation(projector(ket("+g"))) == pytest.approx(0, abs=1e-9)
    assert classical_correlation(BELL) == pytest.approx(1, abs=1e-9)
    cc = (projector(ket("gg")) + projector(ket("ee"))) / 2
    assert classical_correlation(cc) == pytest.approx(1, abs=1e-9)
    h_min, theta, _ = min_conditional_entropy(pauli_expectations(cc))
    assert h_min == pytest.approx(0, abs=1e-9)
    assert min(theta, math.pi - theta) < 1e-3  # along Z


def test_discord_known_values():
    for side in "AB":
        assert discord(projector(ket("++")), side) == pytest.approx(0, abs=1e-4)
        assert discord(BELL, side) == pytest.approx(1, abs=1e-4)
        assert discord(ODD, side) == pytest.approx(0, abs=1e-4)


def test_four_term_mixture_against_brute_force():
    for side in "AB":
        d = discord(FOUR_TERM, side)
        assert d > 0.1
        assert d == pytest.approx(brute_force_discord(FOUR_TERM, side), abs=1e-3)
        assert d == pytest.approx(0.3112781244591328, abs=1e-4)


@pytest.mark.slow
def test_random_states_against_brute_force():
    rng = np.random.default_rng(2024)
    for k in range(20):
        rho = random_state(rng, rank=1 + k % 4)
        side = "AB"[k % 2]
        assert discord(rho, side) == pytest.approx(brute_force_discord(rho, side), abs=1e-3)


@settings(max_examples=20)
@given(seeds)
def test_product_and_classical_states_have_zero_discord(seed):
    rng = np.random.default_rng(seed)
    assert discord(random_product(rng), "A") == pytest.approx(0, abs=1e-6)
    # classical-classical: diagonal in a rotated local product basis
    p = rng.dirichlet(np.ones(4))
    cc = apply_local_unitary(np.diag(p).astype(complex), random_unitary(rng), random_unitary(rng))
    for side in "AB":
        assert discord(cc, side) == pytest.approx(0, abs=1e-6)


@settings(max_examples=15)
@given(seeds)
def test_discord_local_unitary_invariance_and_bounds(seed):
    rng = np.random.default_rng(seed)
    rho = random_state(rng, rank=int(rng.integers(1, 5)))
    rot = apply_local_unitary(rho, random_unitary(rng), random_unitary(rng))
    mi = mutual_information(rho)
    s_min = min(von_neumann_entropy(partial_trace(rho, s)) for s in "AB")
    for side in "AB":
        d = discord(rho, side)
        assert discord(rot, side) == pytest.approx(d, abs=1e-4)
        j = classical_correlation(rho, side)
        assert -1e-9 <= j <= s_min + 1e-9
        assert -1e-12 <= d <= mi + 1e-9


def test_rotate_by_xi_examples():
    rho = random_state(np.random.default_rng(3))
    assert np.allclose(rotate_by_xi(rho, 1.7, XiPair(0, 0)), rho)
    assert np.allclose(rotate_by_xi(rho, 0.0, XiPair(0.4, -2.0)), rho)


@given(seeds, st.floats(-5, 5), st.floats(-3, 3), st.floats(-3, 3))
def test_rotation_preserves_spectrum_and_matches_pauli_form(seed, q, xa, xb):
    rho = random_state(np.random.default_rng(seed))
    xi = XiPair(xa, xb)
    rot = rotate_by_xi(rho, q, xi)
    assert np.allclose(np.linalg.eigvalsh(rot), np.linalg.eigvalsh(rho), atol=1e-10)
    assert purity(rot) == pytest.approx(purity(rho), abs=1e-12)
    assert np.allclose(rotate_pauli(pauli_expectations(rho), q, xi), pauli_expectations(rot), atol=1e-12)


def test_marginalize_identical_states():
    pv = pauli_expectations(random_state(np.random.default_rng(5)))
    grid = uniform_grid(np.broadcast_to(pv, (2, 6, 16)), ni=2)
    for _, state in marginalize(grid, XiPair(0, 0)):
        assert np.allclose(state, state_from_pauli(pv))


def test_marginalize_orthogonal_pair_purity_half():
    pv = np.stack([pauli_expectations(projector(ket("gg"))), pauli_expectations(projector(ket("ee")))])
    grid = uniform_grid(pv[None])
    [(_, state)] = marginalize(grid, XiPair(0, 0))
    assert purity(state) == pytest.approx(0.5)
    assert purity_objective(grid, XiPair(0, 0)) == pytest.approx(0.5)


def test_marginalize_skips_empty_columns():
    pv = np.broadcast_to(pauli_expectations(projector(ket("gg"))), (3, 2, 16))
    grid = uniform_grid(pv, ni=3)
    grid.shot_counts[1] = 0
    grid.reconstructed[1] = False
    out = marginalize(grid, XiPair(0, 0))
    assert len(out) == 2


def test_purity_objective_examples():
    pure = uniform_grid(pauli_expectations(projector(ket("+g")))[None, None])
    assert purity_objective(pure, XiPair(0.3, 0.1)) == pytest.approx(1)
    g = theory_grid(1.0)
    for xi in (XiPair(0, 0), XiPair(1, -2), XiPair(0.35, -0.35)):
        gam = purity_objective(g, xi)
        assert 0.25 <= gam <= 1


def test_zero_strength_optimum_at_origin():
    g = theory_grid(0.0)
    xi = optimize_xi(g)
    assert abs(xi.xi_a) < 1e-3 and abs(xi.xi_b) < 1e-3
    assert purity_reduction(g, xi) < 0.02


def test_optimizer_beats_origin_on_fringed_grid():
    g = theory_grid(1.0)
    xi = optimize_xi(g)
    assert purity_objective(g, xi) >= purity_objective(g, XiPair(0, 0))


def test_identical_states_no_purity_loss():
    pv = pauli_expectations(projector(ket("gg")))
    grid = uniform_grid(np.broadcast_to(pv, (3, 5, 16)), ni=3)
    assert purity_reduction(grid, XiPair(0, 0)) == pytest.approx(0, abs=1e-12)
    with pytest.raises(FlatObjectiveError):
        optimize_xi(grid)
    assert optimize_xi_or_zero(grid) == (XiPair(0.0, 0.0), True)


def _tomo_grid(lam, shots_per_bin, n=5, seed=0):
    g = theory_grid(lam, n=n, span=2.0)
    counts = np.zeros(g.shape + (9, 4), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            rho = g.states[i, j]
            counts[i, j] = simulate_tomography(rho, shots_per_bin, 0.9, seed=seed, shard=(i, j)).counts
    g = ConditionalGrid(g.grid, lam, np.full(g.shape, 9 * shots_per_bin), counts)
    return reconstruct_grid(g, 0.9)


def test_single_resample_band_collapses():
    g = _tomo_grid(0.6, 40)
    cfg = BootstrapConfig(n_resamples=1, seed=3)
    boot = bootstrap_discord(g, 0.9, XiPair(0, 0), cfg)
    lo, hi = _percentile_band(boot, cfg.percentile)
    assert np.array_equal(lo, boot[0]) and np.array_equal(hi, boot[0])
    for r in discord_results(g, XiPair(0, 0), boot, cfg, with_bin_average=False):
        assert r.ci_a[0] <= r.d_alice <= r.ci_a[1]
        assert r.ci_b[0] <= r.d_bob <= r.ci_b[1]


def test_bins_below_minimum_records_are_rejected():
    g = _tomo_grid(0.6, 4)  # 36 records per bin, below the default 50
    assert not g.reconstructed.any()
    g = _tomo_grid(0.6, 6)  # 54 records
    assert g.reconstructed.all()
    assert BootstrapConfig(n_resamples=0).violations()
    assert BootstrapConfig(percentile=40).violations()


def test_result_record_schema():
    rec = DiscordResult(0.6, 0.0, 0.01, 0.02, (0.0, 0.03), (0.01, 0.04), xi_opt=(0.1, 0.2)).to_record()
    for key in ("lambda", "i_m_center", "d_alice", "d_bob", "ci_a", "ci_b", "gamma_opt", "gamma_avg", "r", "xi_opt"):
        assert key in rec


def test_marginal_states_are_physical():
    g = theory_grid(1.3)
    for _, state in marginalize(g, optimize_xi(g)):
        assert not density_matrix_violations(state)
    assert average_purity(g) <= 1


@pytest.mark.parametrize("lam", [0.6, 1.0, 1.3])
def test_optimal_xi_follows_fringe_frequency(lam):
    # Fringes run as cos(k Q_m) with k = sqrt(2 lambda); unwinding them needs
    # Xi_A - Xi_B = k / 2 while the even coherence fixes Xi_A + Xi_B = 0.
    k = math.sqrt(2 * lam)
    xi = optimize_xi(theory_grid(lam, n=41))
    assert xi.xi_a == pytest.approx(k / 4, rel=0.05)
    assert xi.xi_b == pytest.approx(-k / 4, rel=0.05)


def test_optimal_xi_ignores_stark_rates():
    a = optimize_xi(theory_grid(1.0, p=ModelParams(xi_a=0.27, xi_b=1.02)))
    b = optimize_xi(theory_grid(1.0, p=ModelParams(xi_a=-0.8, xi_b=0.1)))
    assert a.xi_a == pytest.approx(b.xi_a, abs=1e-3) and a.xi_b == pytest.approx(b.xi_b, abs=1e-3)
