import numpy as np
import pytest

from kfpspec.fullop import (
    Ass1Error,
    GridSpec,
    PotentialSpec,
    WeightedNormSpec,
    assemble_free,
    assemble_full,
    discrete_spectrum,
    japanese,
    l2_norm,
    load_sampled_potential,
    parity_matrix,
    random_smooth_states,
    subelliptic_ratios,
    weighted_norm,
)
from kfpspec.hermite import HermiteTruncation, position_matrix


def test_grid_geometry():
    g = GridSpec.symmetric(10.0, 40)
    assert g.h == 0.5 and g.x[0] == -10.0 and g.x.size == 40
    p = g.padded(3)
    assert p.h == g.h and p.M == 120 and np.isin(g.x, p.x).all()
    assert g.xi_spectral[20] == 0.0
    with pytest.raises(ValueError):
        GridSpec(1.0, 2.0, 32)


def test_power_law_bound():
    pot = PotentialSpec("power_law", g=2.0, rho=1.0)
    x = np.linspace(-50, 50, 1001)
    # |V| + <x>|V'| = 2<x>^{-1} (1 + x^2/<x>^2) <= 4 <x>^{-1}
    assert pot.ass1_constant(x) <= 4.0 + 1e-12
    PotentialSpec("power_law", g=2.0, rho=1.0, C=4.0).verify(x)
    with pytest.raises(Ass1Error):
        PotentialSpec("power_law", g=2.0, rho=1.0, C=1.0).verify(x)
    with pytest.raises(Ass1Error):
        PotentialSpec("power_law", g=1.0, rho=0.0).verify(x, long_range=True)


def test_derivatives_match_finite_differences():
    x = np.linspace(-3, 3, 13)
    for pot in (PotentialSpec("power_law", g=1.3, rho=0.7), PotentialSpec("gaussian_bump", g=-2.0)):
        d = (pot.V(x + 1e-6) - pot.V(x - 1e-6)) / 2e-6
        assert np.allclose(pot.dV(x), d, atol=1e-8)


def test_sampled_potential(tmp_path):
    x = np.linspace(-5, 5, 101)
    f = tmp_path / "v3.txt"
    np.savetxt(f, np.c_[x, np.exp(-x * x), -2 * x * np.exp(-x * x)])
    pot = load_sampled_potential(f, rho=2.0, g=3.0)
    assert pot.V(0.0) == pytest.approx(3.0)
    assert pot.V(6.0) == 0.0
    f2 = tmp_path / "v2.txt"
    np.savetxt(f2, np.c_[x, np.exp(-x * x)])
    pot2 = load_sampled_potential(f2, rho=2.0)
    with pytest.raises(ValueError):
        pot2.dV(0.0)


def test_free_operator_is_fiber_diagonal():
    g = GridSpec.symmetric(6.0, 16)
    N = 5
    P0 = assemble_free(g, HermiteTruncation(N)).toarray()
    F = np.kron(np.fft.fft(np.eye(16), axis=0), np.eye(N))
    B = F @ P0 @ np.linalg.inv(F)
    for p, xi in enumerate(g.xi_spectral):
        blk = B[p * N:(p + 1) * N, p * N:(p + 1) * N]
        assert np.allclose(blk, np.diag(np.arange(N)) + 1j * xi * position_matrix(N), atol=1e-10)


def test_full_operator_accretive_and_parity_symmetric():
    g = GridSpec.symmetric(8.0, 32)
    tr = HermiteTruncation(8)
    op = assemble_full(PotentialSpec("power_law", g=1.5, rho=1.0), g, tr)
    A = op.matrix.toarray()
    assert np.linalg.eigvalsh(0.5 * (A + A.conj().T)).min() >= -1e-10
    J = parity_matrix(32, 8).toarray()
    assert np.allclose(J @ A @ J, A.T, atol=1e-12)


def test_discrete_complex_eigenvalue_persists():
    pot = PotentialSpec("gaussian_bump", g=8.0)
    values = []
    for M, N in ((64, 16), (96, 20)):
        op = assemble_full(pot, GridSpec.symmetric(16.0, M), HermiteTruncation(N))
        pairs = discrete_spectrum(op, region=(1.5, 1.8, 0.8, 1.0), dense_limit=0, n_eigs=6, sigma=1.62 + 0.88j)
        assert pairs and all(not p.near_essential for p in pairs)
        values.append(pairs[0].value)
    assert abs(values[0] - values[1]) < 1e-2


def test_weighted_norms():
    g = GridSpec.symmetric(8.0, 32)
    u = random_smooth_states(1, seed=3)[0](g, 10)
    assert weighted_norm(u, WeightedNormSpec("G_type", 0, 0), g) == pytest.approx(l2_norm(u, g))
    w1 = weighted_norm(u, WeightedNormSpec("G_type", 1.0, 0.5), g)
    w2 = weighted_norm(u, WeightedNormSpec("G_type", 2.0, 0.5), g)
    assert l2_norm(u, g) < w1 < w2
    assert weighted_norm(u, WeightedNormSpec("H_type", 2, 0), g) > l2_norm(u, g)
    with pytest.raises(ValueError):
        weighted_norm(u, WeightedNormSpec("H_type", 1, 0), g)
    x = japanese(g.x)[:, None]
    assert weighted_norm(u, WeightedNormSpec("G_type", 0, 1.0), g) == pytest.approx(l2_norm(x * u, g))


def test_random_states_are_reproducible():
    g = GridSpec.symmetric(8.0, 32)
    a = random_smooth_states(2, seed=5)
    b = random_smooth_states(2, seed=5)
    assert np.array_equal(a[1](g, 10), b[1](g, 10))
    lhs, rhs = subelliptic_ratios(a[0](g, 10), g)
    assert 0 < lhs and 0 < rhs
