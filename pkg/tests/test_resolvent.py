import numpy as np
import pytest

from kfpspec.fiber import CutoffSpec
from kfpspec.fullop import GridSpec, assemble_free
from kfpspec.hermite import HermiteTruncation
from kfpspec.resolvent import (
    AdmissibilityError,
    BoundaryValueRequest,
    FreeResolvent,
    OffAxisResolvent,
    ThresholdError,
    lap_csv,
    lap_probe,
    laplace_kernel,
    laplace_kernel_apply,
    wavenumber,
)


def _smooth_states(grid, N, count=3, seed=1):
    rng = np.random.default_rng(seed)
    x = grid.x[:, None]
    U = np.zeros((grid.M, N, count), dtype=complex)
    for c in range(count):
        prof = np.exp(-((x - rng.uniform(-3, 3)) ** 2) / rng.uniform(1, 3) + 1j * rng.uniform(-1, 1) * x)
        U[:, :6, c] = prof * rng.normal(size=6)
    return U


def test_wavenumber_branches():
    k = wavenumber(0.5, 1)
    assert k.real > 0 and abs(k * k - 0.5) < 1e-14
    assert wavenumber(0.5, -1).real < 0
    for mu in (-1.0, 0.3 + 0.2j, 2.0 - 0.1j):
        assert wavenumber(mu, 1).imag >= 0
    with pytest.raises(ThresholdError):
        wavenumber(0.0, 1)


def test_kernel_formula_one_dimension():
    r = np.array([0.0, 0.5, 2.0])
    assert np.allclose(laplace_kernel(r, -1.0, 1), 0.5 * np.exp(-r))


@pytest.mark.parametrize("mu", [-1.0, 0.5 + 0.6j, 2.0 + 1.0j])
def test_kernel_apply_solves_helmholtz(mu):
    # (-d^2/dx^2 - mu) u = f for a Gaussian f, checked spectrally away from the edges
    L, M = 40.0, 1024
    x = np.linspace(-L, L, M, endpoint=False)
    h = x[1] - x[0]
    f = np.exp(-x * x)
    u = laplace_kernel_apply(mu, 1, f, h)
    k = 2 * np.pi * np.fft.fftfreq(M, h)
    lap = np.fft.ifft(k * k * np.fft.fft(u))
    inner = np.abs(x) < 8
    assert np.max(np.abs(lap - mu * u - f)[inner]) < 1e-6


def test_offaxis_periodic_is_dense_inverse():
    grid = GridSpec.symmetric(6.0, 16)
    trunc = HermiteTruncation(6)
    z = -0.5 + 0.3j
    R = OffAxisResolvent(z, grid, trunc, pad=1)
    A = assemble_free(grid, trunc).toarray() - z * np.eye(96)
    assert np.allclose(R.matrix(0.0), np.linalg.inv(A), atol=1e-12)


def test_representation_matches_fiber_inversion():
    grid = GridSpec.symmetric(24.0, 96)
    trunc = HermiteTruncation(12)
    U = _smooth_states(grid, 12)
    z = 0.5 + 0.05j
    a = FreeResolvent(z, grid, trunc).apply(U)
    b = OffAxisResolvent(z, grid, trunc, pad=16, fiber_trunc=HermiteTruncation(64)).apply(U)
    assert np.abs(a - b).max() < 1e-4 * np.abs(b).max()


def test_boundary_request_validation():
    c = CutoffSpec.for_energy(0.5)
    BoundaryValueRequest(0.5, "+", 0.6, c)
    with pytest.raises(ThresholdError):
        BoundaryValueRequest(1.02, "+", 0.6)
    with pytest.raises(AdmissibilityError):
        BoundaryValueRequest(0.5, "+", 0.5)
    with pytest.raises(AdmissibilityError):
        BoundaryValueRequest(0.5, "-", 1.0, rho=1.0)
    with pytest.raises(ValueError):
        BoundaryValueRequest(0.5, "x", 0.6)


def test_lap_probe_flags_and_csv():
    grid = GridSpec.symmetric(8.0, 32)
    trunc = HermiteTruncation(6)
    rec = lap_probe(1.0, "+", 0.0, [1e-1, 1e-2], trunc, grid)
    assert "threshold" in rec.flags and "unweighted" in rec.flags
    rec2 = lap_probe(0.5, "+", 0.6, [1e-1, 1e-2, 1e-3], trunc, grid)
    assert rec2.flags == []
    text = lap_csv([rec, rec2])
    assert text == lap_csv([rec, rec2])
    assert text.splitlines()[0] == "lambda,sign,s,norm,cauchy_rate,flags"
    with pytest.raises(ValueError):
        lap_probe(0.5, "+", 0.6, [1e-2, 1e-1], trunc, grid)
