"""Free resolvent R0(z) = (P0 - z)^{-1} for n = 1: boundary values, off-axis values, LAP probes.

Boundary values R0(lam +- i0) come from the representation

    R0(z) = sum_{k<=l} [chi Pi_k(D_x)] (-d^2/dx^2 - (z - k))^{-1} + r_l(z, D_x),

where the scalar resolvents are applied with their explicit outgoing or
incoming Green kernels and r_l is a Fourier multiplier that stays holomorphic
across the real axis.  No periodic spectrum is involved in that path.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import lfilter
from scipy.special import hankel1, roots_legendre

from .fiber import (
    CutoffSpec,
    assemble_fiber,
    fiber_resolvent,
    projection_cached,
    remainder,
)
from .fullop import GridSpec, japanese
from .hermite import HermiteTruncation

__all__ = [
    "ThresholdError",
    "AdmissibilityError",
    "BoundaryValueRequest",
    "wavenumber",
    "laplace_kernel",
    "laplace_kernel_apply",
    "FreeResolvent",
    "OffAxisResolvent",
    "free_resolvent_boundary",
    "free_resolvent_offaxis",
    "weighted_matrix",
    "extrapolate_offaxis",
    "LapRecord",
    "lap_probe",
    "lap_csv",
    "window_growth",
]

THRESHOLD_TOL = 1e-6
DEFAULT_FIBER_N = 64


class ThresholdError(ValueError):
    """Spectral parameter too close to a threshold in N."""


class AdmissibilityError(ValueError):
    """Weight exponent outside the open interval (1/2, (1 + rho)/2)."""


def _sign(sign) -> int:
    if sign in ("+", 1, +1.0):
        return 1
    if sign in ("-", -1, -1.0):
        return -1
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


@dataclass(frozen=True)
class BoundaryValueRequest:
    lam: float
    sign: int
    s: float
    cutoff: CutoffSpec | None = None
    rho: float = 1.0
    exclusion_radius: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "sign", _sign(self.sign))
        d = abs(self.lam - round(self.lam))
        if d < self.exclusion_radius or self.lam <= 0:
            raise ThresholdError(f"lambda={self.lam} lies within {self.exclusion_radius} of a threshold")
        if not (0.5 < self.s < 0.5 * (1.0 + self.rho)):
            raise AdmissibilityError(f"need 1/2 < s < {(1 + self.rho) / 2}, got s={self.s}")
        cutoff = self.cutoff or CutoffSpec.for_energy(self.lam)
        if not (cutoff.l > self.lam and cutoff.a > self.lam):
            raise ValueError(f"cutoff l={cutoff.l}, a={cutoff.a} must exceed lambda={self.lam}")
        object.__setattr__(self, "cutoff", cutoff)


# -- scalar kernels -----------------------------------------------------------

def wavenumber(mu: complex, sign: int = 1) -> complex:
    """kappa with kappa^2 = mu + sign*i0 and Im kappa >= 0."""
    mu = complex(mu)
    if abs(mu) < THRESHOLD_TOL:
        raise ThresholdError(f"|mu| = {abs(mu):.1e} is at the threshold singularity")
    if mu.imag != 0.0:
        k = np.sqrt(mu)
        return complex(k if k.imag >= 0 else -k)
    if mu.real > 0:
        return complex(_sign(sign) * np.sqrt(mu.real))
    return complex(1j * np.sqrt(-mu.real))


def laplace_kernel(r, mu: complex, sign: int = 1, dim: int = 1):
    """Green kernel of (-Delta - (mu + sign i0))^{-1} at distance r > 0.

    General dimension: (i/4) (kappa / (2 pi r))^{dim/2 - 1} H^(1)_{dim/2 - 1}(kappa r).
    """
    kappa = wavenumber(mu, sign)
    r = np.asarray(r, dtype=float)
    if dim == 1:
        return 1j / (2.0 * kappa) * np.exp(1j * kappa * r)
    if dim == 3:
        return np.exp(1j * kappa * r) / (4.0 * np.pi * r)
    nu = dim / 2.0 - 1.0
    return 0.25j * (kappa / (2.0 * np.pi * r)) ** nu * hankel1(nu, kappa * r)


STENCIL_HALF = 5  # 2*STENCIL_HALF interpolation nodes per segment


@lru_cache(maxsize=256)
def _segment_weights(kappa: complex, h: float, q: int = STENCIL_HALF) -> tuple[np.ndarray, np.ndarray]:
    """Weights for h*int_0^1 e^{i kappa h (1-t)} f and h*int_0^1 e^{i kappa h t} f
    with f the degree 2q-1 interpolant through the nodes -q+1, ..., q."""
    nodes = np.arange(-q + 1, q + 1, dtype=float)
    t, w = roots_legendre(24)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    L = np.ones((nodes.size, t.size))
    for s in range(nodes.size):
        for j in range(nodes.size):
            if j != s:
                L[s] *= (t - nodes[j]) / (nodes[s] - nodes[j])
    e_right = np.exp(1j * kappa * h * (1.0 - t))
    e_left = np.exp(1j * kappa * h * t)
    return h * (L * e_right) @ w, h * (L * e_left) @ w


def _kernel_1d(kappa: complex, f: np.ndarray, h: float) -> np.ndarray:
    # u_i = (i/2kappa) [A_i + B_i]; A, B accumulate the left and right halves of the integral
    f = np.asarray(f, dtype=complex)
    M = f.shape[0]
    q = STENCIL_HALF
    wS, wT = _segment_weights(complex(kappa), float(h), q)
    pad = np.zeros((M + 2 * q - 1,) + f.shape[1:], dtype=complex)
    pad[q - 1 : M + q - 1] = f
    S = sum(wS[j] * pad[j : j + M - 1] for j in range(2 * q))
    T = sum(wT[j] * pad[j : j + M - 1] for j in range(2 * q))
    e = np.exp(1j * kappa * h)
    A = np.zeros_like(f)
    B = np.zeros_like(f)
    A[1:] = lfilter([1.0], [1.0, -e], S, axis=0)
    B[:-1] = lfilter([1.0], [1.0, -e], T[::-1], axis=0)[::-1]
    return 1j / (2.0 * kappa) * (A + B)


def laplace_kernel_apply(mu: complex, sign, f: np.ndarray, h: float, dim: int = 1) -> np.ndarray:
    """Apply (-Delta - (mu +- i0))^{-1} to samples along axis 0.

    dim=1: ``f`` lives on a uniform grid with spacing ``h`` and vanishes outside it.
    dim=3: ``f`` is radial, sampled at r_m = (m + 1/2) h; the odd extension of
    r f is solved in one dimension and divided by r.
    """
    kappa = wavenumber(mu, _sign(sign) if np.imag(mu) == 0 else 1)
    if dim == 1:
        return _kernel_1d(kappa, f, h)
    if dim == 3:
        f = np.asarray(f, dtype=complex)
        M = f.shape[0]
        r = (np.arange(M) + 0.5) * h
        rs = r.reshape((M,) + (1,) * (f.ndim - 1))
        g = rs * f
        w = _kernel_1d(kappa, np.concatenate([-g[::-1], g]), h)
        return w[M:] / rs
    raise ValueError("dim must be 1 or 3")


# -- grid resolvents ---------------------------------------------------------

def _compress(A: np.ndarray, N: int) -> np.ndarray:
    return A[:N, :N]


class _ConvolutionOperator:
    """Translation-invariant operator on (M, N) states, stored as x-offset blocks.

    ``green[d + M - 1]`` is the N x N block coupling input node n to output
    node n + d.  With ``periodic`` the offsets wrap modulo M instead.
    """

    grid: GridSpec
    trunc: HermiteTruncation
    green: np.ndarray
    periodic: bool = False

    def _index(self) -> np.ndarray:
        M = self.grid.M
        d = np.arange(M)[:, None] - np.arange(M)[None, :]
        return d % M if self.periodic else d + M - 1

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=complex)
        M = self.grid.M
        if self.periodic:
            gh = np.fft.fft(self.green, axis=0)
            return np.fft.ifft(np.einsum("pij,pj...->pi...", gh, np.fft.fft(u, axis=0)), axis=0)
        L = 1 << int(np.ceil(np.log2(3 * M - 2)))
        gh = np.fft.fft(self.green, n=L, axis=0)
        uh = np.fft.fft(u, n=L, axis=0)
        c = np.fft.ifft(np.einsum("pij,pj...->pi...", gh, uh), axis=0)
        return c[M - 1 : 2 * M - 1]

    def matrix(self, s: float = 0.0, s_out: float | None = None) -> np.ndarray:
        """Dense <x>^{-s_out} A <x>^{-s} in the (m, j) -> m N + j ordering."""
        M, N = self.grid.M, self.trunc.N
        s_out = s if s_out is None else s_out
        G = self.green[self._index()]  # (M, M, N, N)
        G = G.transpose(0, 2, 1, 3).reshape(M * N, M * N)
        w_in = np.repeat(japanese(self.grid.x) ** (-s), N)
        w_out = np.repeat(japanese(self.grid.x) ** (-s_out), N)
        return (w_out[:, None] * G) * w_in[None, :]


def _centered_response(apply_big, big_M: int, N: int, M: int) -> np.ndarray:
    # response to unit sources at the center node, offsets -(M-1)..(M-1)
    c = big_M // 2
    if c - (M - 1) < 0 or c + M > big_M:
        raise ValueError("padded grid too small for the requested window")
    E = np.zeros((big_M, N, N), dtype=complex)
    E[c, np.arange(N), np.arange(N)] = 1.0
    out = apply_big(E)
    return out[c - (M - 1) : c + M]


class FreeResolvent(_ConvolutionOperator):
    """R0(z) on grid x Hermite(N) states, by the representation formula.

    ``z`` real gives the boundary value R0(z + sign i0); complex ``z`` gives the
    ordinary resolvent.  Fiber quantities are computed with ``fiber_trunc``
    (default N=64) and compressed to the working ``trunc``.  The operator is
    translation invariant, so only the response to a centered source is
    computed, on a grid ``pad`` times longer than the window so that the
    xi-multiplier tails neither wrap around nor get cut.
    """

    def __init__(self, z, grid: GridSpec, trunc: HermiteTruncation, cutoff: CutoffSpec | None = None,
                 sign=1, fiber_trunc: HermiteTruncation | None = None, pad: int = 8):
        self.z = complex(z)
        self.sign = _sign(sign)
        self.grid = grid
        self.trunc = trunc
        self.periodic = False
        self.fiber_trunc = fiber_trunc or HermiteTruncation(max(DEFAULT_FIBER_N, trunc.N))
        self.cutoff = cutoff or CutoffSpec.for_energy(max(self.z.real, 0.0))
        if self.z.real >= self.cutoff.a:
            raise ValueError(f"need Re z < a = {self.cutoff.a}")
        if pad < 3:
            raise ValueError("pad must be at least 3")
        self.pad = int(pad)
        big = grid.padded(self.pad)
        N, Mb = trunc.N, big.M
        L = self.cutoff.l
        self.kappas = []
        for k in range(L + 1):
            mu = self.z - k
            if self.z.imag == 0.0 and abs(mu) < THRESHOLD_TOL:
                raise ThresholdError(f"z={self.z} sits on the threshold {k}")
            self.kappas.append(wavenumber(mu, self.sign))
        pole_blocks = np.zeros((L + 1, Mb, N, N), dtype=complex)
        rem_blocks = np.zeros((Mb, N, N), dtype=complex)
        nyquist = Mb // 2 if Mb % 2 == 0 else -1
        for p, x in enumerate(big.xi):
            # the Nyquist mode stands for both +-xi_max; averaging keeps R0 real for real z
            keys = (float(x), -float(x)) if p == nyquist else (float(x),)
            for key in keys:
                chi = float(self.cutoff.chi(key))
                if chi != 0.0:
                    for k in range(L + 1):
                        pole_blocks[k, p] += chi * _compress(projection_cached(k, key, self.fiber_trunc), N) / len(keys)
                rem_blocks[p] += _compress(remainder(self.z, self.cutoff, key, self.fiber_trunc).entries, N) / len(keys)

        def term(k):
            def apply_big(E):
                g = np.fft.ifft(np.einsum("pij,pj...->pi...", pole_blocks[k] if k >= 0 else rem_blocks,
                                          np.fft.fft(E, axis=0)), axis=0)
                return _kernel_1d(self.kappas[k], g, grid.h) if k >= 0 else g
            return apply_big

        self.term_greens = [_centered_response(term(k), Mb, N, grid.M) for k in list(range(L + 1)) + [-1]]
        self.green = sum(self.term_greens)

    @property
    def boundary(self) -> bool:
        return self.z.imag == 0.0

    def apply_terms(self, u: np.ndarray) -> list[np.ndarray]:
        """Individual contributions [k=0, ..., k=l, remainder]."""
        out = []
        for g in self.term_greens:
            op = _ConvolutionOperator()
            op.grid, op.trunc, op.green, op.periodic = self.grid, self.trunc, g, False
            out.append(op.apply(u))
        return out


class OffAxisResolvent(_ConvolutionOperator):
    """R0(z) by fiberwise inversion and FFT on a periodic grid ``pad`` times longer.

    With pad=1 and no ``fiber_trunc`` this is exactly the inverse of the
    assembled periodic P0 - z.  With ``fiber_trunc`` larger than ``trunc`` the
    fiber inverses are computed there and compressed.
    """

    def __init__(self, z, grid: GridSpec, trunc: HermiteTruncation, pad: int = 1,
                 fiber_trunc: HermiteTruncation | None = None, min_dist: float = 1e-6):
        z = complex(z)
        if _dist_to_halfline(z) < min_dist:
            raise ThresholdError(f"z={z} is within {min_dist} of [0, inf)")
        self.z = z
        self.grid = grid
        self.trunc = trunc
        self.pad = int(pad)
        N = trunc.N
        ft = fiber_trunc or trunc
        if self.pad == 1:
            self.periodic = True
            blocks = _fiber_inverse_blocks(z, grid.xi_spectral, ft, N)
            E = np.zeros((grid.M, N, N), dtype=complex)
            E[0, np.arange(N), np.arange(N)] = 1.0
            self.green = np.fft.ifft(np.einsum("pij,pjk->pik", blocks, np.fft.fft(E, axis=0)), axis=0)
            return
        if self.pad < 2:
            raise ValueError("pad must be a positive integer")
        self.periodic = False
        big = grid.padded(max(self.pad, 2))
        blocks = _fiber_inverse_blocks(z, big.xi_spectral, ft, N)

        def apply_big(E):
            return np.fft.ifft(np.einsum("pij,pj...->pi...", blocks, np.fft.fft(E, axis=0)), axis=0)

        self.green = _centered_response(apply_big, big.M, N, grid.M)


def _fiber_inverse_blocks(z: complex, xi: np.ndarray, ft: HermiteTruncation, N: int, chunk: int = 1024) -> np.ndarray:
    """Compressed fiber inverses (A_ft(xi) - z)^{-1}[:N, :N], solved in batches."""
    Nf = ft.N
    n_diag = np.arange(Nf, dtype=float) - z
    off = np.sqrt(np.arange(1, Nf, dtype=float))
    rhs = np.zeros((Nf, N), dtype=complex)
    rhs[:N, :N] = np.eye(N)
    out = np.empty((xi.size, N, N), dtype=complex)
    for c0 in range(0, xi.size, chunk):
        xs = xi[c0 : c0 + chunk]
        A = np.zeros((xs.size, Nf, Nf), dtype=complex)
        idx = np.arange(Nf)
        A[:, idx, idx] = n_diag
        A[:, idx[:-1], idx[1:]] = 1j * xs[:, None] * off
        A[:, idx[1:], idx[:-1]] = 1j * xs[:, None] * off
        X = np.linalg.solve(A, np.broadcast_to(rhs, (xs.size, Nf, N)))
        out[c0 : c0 + chunk] = X[:, :N, :]
    return out


def _dist_to_halfline(z: complex) -> float:
    if z.real >= 0:
        return abs(z.imag)
    return abs(z)


def weighted_matrix(apply, grid: GridSpec, N: int, s: float, s_out: float | None = None,
                    block: int = 512) -> np.ndarray:
    """Dense matrix of <x>^{-s_out} A <x>^{-s} for a linear map ``apply`` on (M, N) states.

    ``apply`` may also be a convolution operator, whose matrix is assembled directly.
    """
    if isinstance(apply, _ConvolutionOperator):
        return apply.matrix(s, s_out)
    M = grid.M
    n = M * N
    s_out = s if s_out is None else s_out
    w_in = japanese(grid.x) ** (-s)
    w_out = japanese(grid.x) ** (-s_out)
    out = np.empty((n, n), dtype=complex)
    for c0 in range(0, n, block):
        c1 = min(n, c0 + block)
        E = np.zeros((M, N, c1 - c0), dtype=complex)
        idx = np.arange(c0, c1)
        E[idx // N, idx % N, idx - c0] = w_in[idx // N]
        Y = apply(E) * w_out[:, None, None]
        out[:, c0:c1] = Y.reshape(n, c1 - c0)
    return out


def free_resolvent_boundary(req: BoundaryValueRequest, trunc: HermiteTruncation, grid: GridSpec,
                            fiber_trunc: HermiteTruncation | None = None, matrix: bool = True):
    """<x>^{-s} R0(lam +- i0) <x>^{-s} as a dense matrix (or the FreeResolvent if matrix=False)."""
    R = FreeResolvent(req.lam, grid, trunc, req.cutoff, req.sign, fiber_trunc)
    if not matrix:
        return R
    return R.matrix(req.s)


def free_resolvent_offaxis(z, trunc: HermiteTruncation, grid: GridSpec, pad: int = 1,
                           fiber_trunc: HermiteTruncation | None = None, s: float = 0.0,
                           matrix: bool = True):
    R = OffAxisResolvent(z, grid, trunc, pad, fiber_trunc)
    if not matrix:
        return R
    return R.matrix(s)


def extrapolate_offaxis(lam: float, sign, s: float, trunc: HermiteTruncation, grid: GridSpec,
                        deltas=(0.01, 0.005, 0.0025, 0.00125), cutoff: CutoffSpec | None = None,
                        fiber_trunc: HermiteTruncation | None = None) -> tuple[np.ndarray, float]:
    """Richardson limit delta -> 0 of <x>^{-s} R0(lam + sign i delta) <x>^{-s}.

    Returns the limit and the size of the last Richardson correction.
    """
    sg = _sign(sign)
    cutoff = cutoff or CutoffSpec.for_energy(lam)
    mats = [
        FreeResolvent(lam + sg * 1j * d, grid, trunc, cutoff, sg, fiber_trunc).matrix(s)
        for d in deltas
    ]
    h = np.asarray(deltas, dtype=float)
    table = [mats]
    for level in range(1, len(mats)):
        prev = table[-1]
        table.append([(h[i] / h[i + level] * prev[i + 1] - prev[i]) / (h[i] / h[i + level] - 1.0)
                      for i in range(len(prev) - 1)])
    best = table[-1][0]
    corr = float(np.linalg.norm(best - table[-2][-1], 2))
    return best, corr


# -- LAP diagnostics -----------------------------------------------------------

@dataclass
class LapRecord:
    lam: float
    sign: int
    s: float
    eps: list[float]
    norms: list[float]
    differences: list[float]
    cauchy_rate: float
    flags: list[str] = field(default_factory=list)

    def csv_row(self) -> list:
        return [f"{self.lam:.10g}", "+" if self.sign > 0 else "-", f"{self.s:.6g}",
                f"{self.norms[-1]:.12e}", f"{self.cauchy_rate:.12e}", ";".join(self.flags)]


LAP_CSV_HEADER = ["lambda", "sign", "s", "norm", "cauchy_rate", "flags"]


def lap_csv(records: list[LapRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LAP_CSV_HEADER)
    for r in records:
        w.writerow(r.csv_row())
    return buf.getvalue()


def lap_probe(lam: float, sign, s: float, eps_sequence, trunc: HermiteTruncation, grid: GridSpec,
              pot=None, cutoff: CutoffSpec | None = None,
              fiber_trunc: HermiteTruncation | None = None) -> LapRecord:
    """Norms and successive differences of <x>^{-s} R(lam +- i eps_j) <x>^{-s}.

    With ``pot`` given the perturbed resolvent (1 + R0 W)^{-1} R0 is used.
    """
    eps = [float(e) for e in eps_sequence]
    if any(b >= a for a, b in zip(eps, eps[1:])) or eps[-1] <= 0:
        raise ValueError("eps_sequence must be strictly decreasing and positive")
    sg = _sign(sign)
    flags = []
    if abs(lam - round(lam)) < 0.05:
        flags.append("threshold")
    if not s > 0.5:
        flags.append("unweighted" if s == 0 else "below_lap_range")
    if cutoff is None:
        cutoff = CutoffSpec.for_energy(lam) if abs(lam - round(lam)) > 1e-9 else CutoffSpec(int(round(lam)) + 1, round(lam) + 1.5)
    mats = []
    for e in eps:
        R = FreeResolvent(lam + sg * 1j * e, grid, trunc, cutoff, sg, fiber_trunc)
        G0 = R.matrix(s)
        if pot is not None:
            from .bs import weighted_potential
            Ws = weighted_potential(pot, grid, trunc, s)
            G0 = np.linalg.solve(np.eye(G0.shape[0]) + G0 @ Ws, G0)
        mats.append(G0)
    norms = [float(np.linalg.norm(m, 2)) for m in mats]
    diffs = [float(np.linalg.norm(a - b, 2)) for a, b in zip(mats, mats[1:])]
    rate = diffs[-1] / diffs[-2] if len(diffs) >= 2 and diffs[-2] > 0 else float("nan")
    if len(diffs) >= 2 and any(b > a for a, b in zip(diffs, diffs[1:])):
        flags.append("non_monotone")
    return LapRecord(float(lam), sg, float(s), eps, norms, diffs, float(rate), flags)


def window_growth(lam: float, sign, s: float, trunc: HermiteTruncation, half_widths, h: float = 0.5,
                  fiber_trunc: HermiteTruncation | None = None) -> list[float]:
    """||<x>^{-s} R0(lam +- i0) <x>^{-s}|| on windows [-L, L]; bounded in L only for s > 1/2."""
    out = []
    cutoff = CutoffSpec.for_energy(lam)
    for L in half_widths:
        M = int(round(2 * L / h))
        grid = GridSpec.symmetric(L, M)
        R = FreeResolvent(lam, grid, trunc, cutoff, sign, fiber_trunc)
        out.append(float(np.linalg.norm(R.matrix(s), 2)))
    return out
