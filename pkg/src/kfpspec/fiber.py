"""The fiber operator P0(xi) = -d^2/dv^2 + v^2/4 - 1/2 + i v xi (n = 1).

In the Hermite basis the fiber is ``diag(0..N-1) + i xi V`` with ``V`` the
tridiagonal position matrix.  Its eigenvalues are l + xi^2 with rank-one Riesz
projections c_l c_l^T, where c_l are the coefficients of phi_l(v + 2 i xi).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from scipy.special import eval_laguerre

from .hermite import (
    HermiteTruncation,
    MultiIndex,
    hermite_functions,
    number_matrix,
    position_matrix,
    shifted_state,
)

__all__ = [
    "FiberMatrix",
    "CutoffSpec",
    "AccuracyError",
    "NearSingularError",
    "ExtrapolationError",
    "ConditioningWarning",
    "smoothstep5",
    "smoothstep_inf",
    "assemble_fiber",
    "fiber_eigenvalues",
    "riesz_projection",
    "projection_residuals",
    "projection_norm_exact",
    "fiber_resolvent",
    "remainder",
    "projection_cached",
    "remainder_one_sided",
    "weyl_symbol_of_projection",
    "b0_closed_form",
    "b0_weyl_exact",
    "weyl_kernel_from_symbol",
    "fiber_semigroup",
]


class AccuracyError(ArithmeticError):
    """A truncated quantity failed its internal consistency check."""


class NearSingularError(ArithmeticError):
    """The spectral parameter is too close to the spectrum."""


class ExtrapolationError(ArithmeticError):
    """Richardson extrapolation did not settle."""


class ConditioningWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FiberMatrix:
    """A truncated operator acting on Hermite coefficients at a fixed xi."""

    xi: float
    trunc: HermiteTruncation
    entries: np.ndarray

    @property
    def N(self) -> int:
        return self.trunc.N

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def norm(self) -> float:
        return float(np.linalg.norm(self.entries, 2))


def smoothstep5(t):
    """C^2 step: 0 for t <= 0, 1 for t >= 1, 6t^5 - 15t^4 + 10t^3 between."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def smoothstep_inf(t):
    """C-infinity step built from exp(-1/t); its Fourier transform decays faster than any power."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class CutoffSpec:
    """Radial cutoff chi(xi) used in the pole/remainder split of the fiber resolvent.

    chi = 1 for |xi|^2 <= plateau and chi = 0 for |xi|^2 >= support, with a
    C-infinity transition.  Any plateau >= a keeps the remainder holomorphic in
    Re z < a.  The default plateau = a, support = a + 2 keeps ||chi Pi_k|| (which
    grows like exp(2 xi^2)) moderate, so the pole and remainder parts do not
    cancel catastrophically on a grid.
    """

    l: int
    a: float
    plateau: float | None = None
    support: float | None = None

    def __post_init__(self):
        if not (self.l < self.a < self.l + 1):
            raise ValueError(f"need l < a < l+1, got l={self.l}, a={self.a}")
        plateau = self.a if self.plateau is None else float(self.plateau)
        support = plateau + 2.0 if self.support is None else float(self.support)
        if not (self.a <= plateau < support):
            raise ValueError(f"need a <= plateau < support, got {plateau}, {support}")
        object.__setattr__(self, "plateau", plateau)
        object.__setattr__(self, "support", support)

    @classmethod
    def for_energy(cls, lam: float, plateau_gap: float = 0.0, support_gap: float = 2.0):
        """Smallest l > lam with a = l + 1/2."""
        l = int(np.floor(lam)) + 1
        a = l + 0.5
        return cls(l=l, a=a, plateau=a + plateau_gap, support=a + support_gap)

    def chi(self, xi):
        r2 = np.asarray(xi, dtype=float) ** 2
        return 1.0 - smoothstep_inf((r2 - self.plateau) / (self.support - self.plateau))

    def chi1(self, xi):
        return 1.0 - self.chi(xi)


def assemble_fiber(xi: float, trunc: HermiteTruncation) -> FiberMatrix:
    if trunc.N < 2:
        raise ValueError("need N >= 2")
    if trunc.dim != 1:
        raise NotImplementedError("fiber assembly is implemented for n = 1")
    N = trunc.N
    A = number_matrix(N) + 1j * float(xi) * position_matrix(N)
    return FiberMatrix(float(xi), trunc, A)


def fiber_eigenvalues(xi: float, trunc: HermiteTruncation) -> np.ndarray:
    """Eigenvalues of the truncated fiber sorted by real part."""
    ev = np.linalg.eigvals(assemble_fiber(xi, trunc).entries)
    return ev[np.argsort(ev.real, kind="stable")]


def riesz_projection(l: int, xi: float, trunc: HermiteTruncation, tol: float = 1e-6) -> FiberMatrix:
    """Matrix of Pi_l^xi phi = sum_{|alpha|=l} (int psi_alpha^xi phi) psi_alpha^xi.

    Raises AccuracyError if the relative idempotency residual
    ||Pi^2 - Pi|| / ||Pi||^2 exceeds ``tol``.
    """
    if l >= trunc.N:
        raise ValueError("l must be < N")
    P = np.zeros((trunc.size, trunc.size), dtype=complex)
    for alpha in MultiIndex.of_order(l, trunc.dim):
        c = shifted_state(alpha, np.full(trunc.dim, xi), trunc, warn_tol=np.inf)
        P += np.outer(c, c)
    nrm = np.linalg.norm(P, 2)
    resid = np.linalg.norm(P @ P - P, 2) / max(nrm * nrm, 1.0)
    if resid > tol:
        raise AccuracyError(
            f"idempotency residual {resid:.2e} at l={l}, xi={xi}: truncation N={trunc.N} too small"
        )
    return FiberMatrix(float(xi), trunc, P)


def projection_residuals(ls, xi: float, trunc: HermiteTruncation) -> dict:
    """Absolute and scale-relative residuals of Pi_l Pi_m - delta_lm Pi_l."""
    Ps = {l: riesz_projection(l, xi, trunc, tol=np.inf).entries for l in ls}
    absolute = 0.0
    relative = 0.0
    for l in ls:
        for m in ls:
            R = Ps[l] @ Ps[m] - (Ps[l] if l == m else 0.0)
            r = np.linalg.norm(R, 2)
            scale = max(1.0, np.linalg.norm(Ps[l], 2) * np.linalg.norm(Ps[m], 2))
            absolute = max(absolute, r)
            relative = max(relative, r / scale)
    return {"absolute": absolute, "relative": relative}


def projection_norm_exact(l: int, xi: float) -> float:
    """||Pi_l^xi|| = ||psi_l^xi||^2 = exp(2 xi^2) L_l(-4 xi^2) for n = 1."""
    x2 = float(xi) ** 2
    return float(np.exp(2.0 * x2) * eval_laguerre(l, -4.0 * x2))


def fiber_resolvent(
    z: complex,
    xi: float,
    trunc: HermiteTruncation,
    min_dist: float = 1e-8,
    sv_floor: float = 1e-13,
) -> FiberMatrix:
    """(P0(xi) - z)^{-1} on the truncation."""
    z = complex(z)
    xi = float(xi)
    ls = np.arange(trunc.N)
    d = np.min(np.abs(ls + xi**2 - z))
    if d < min_dist:
        raise NearSingularError(f"z={z} within {d:.1e} of the fiber spectrum at xi={xi}")
    A = assemble_fiber(xi, trunc).entries - z * np.eye(trunc.N)
    smin = sla.svdvals(A)[-1]
    if smin < sv_floor * max(1.0, trunc.N):
        raise NearSingularError(f"smallest singular value {smin:.1e} at z={z}, xi={xi}")
    return FiberMatrix(xi, trunc, np.linalg.solve(A, np.eye(trunc.N)))


def _pole_part(z: complex, cutoff: CutoffSpec, xi: float, trunc: HermiteTruncation) -> np.ndarray:
    chi = float(cutoff.chi(xi))
    out = np.zeros((trunc.N, trunc.N), dtype=complex)
    if chi == 0.0:
        return out
    for k in range(cutoff.l + 1):
        out += chi * projection_cached(k, xi, trunc) / (xi**2 + k - z)
    return out


@lru_cache(maxsize=4096)
def _projection_cached(k: int, xi: float, N: int, quad_factor: int) -> np.ndarray:
    P = riesz_projection(k, xi, HermiteTruncation(N, quad_factor), tol=np.inf).entries
    P.setflags(write=False)
    return P


def projection_cached(k: int, xi: float, trunc: HermiteTruncation) -> np.ndarray:
    """Read-only Pi_k^xi, memoized on (k, xi, N, quad_factor); bitwise equal to a fresh computation."""
    if trunc.dim != 1:
        return riesz_projection(k, xi, trunc, tol=np.inf).entries
    return _projection_cached(int(k), float(xi), trunc.N, trunc.quad_factor)


def _remainder_direct(z, cutoff, xi, trunc):
    A = assemble_fiber(xi, trunc).entries - z * np.eye(trunc.N)
    return np.linalg.solve(A, np.eye(trunc.N)) - _pole_part(z, cutoff, xi, trunc)


DEFAULT_DELTAS = (1e-2, 1e-3, 1e-4)


def _richardson(values, deltas):
    # values[i] = f(delta_i) with expansion in even powers of delta
    h = np.asarray(deltas, dtype=float) ** 2
    table = [list(values)]
    for level in range(1, len(values)):
        prev = table[-1]
        row = []
        for i in range(len(prev) - 1):
            r = h[i] / h[i + level]
            row.append((r * prev[i + 1] - prev[i]) / (r - 1.0))
        table.append(row)
    return table


def _richardson_odd(values, deltas):
    # one-sided: expansion in all powers of delta
    h = np.asarray(deltas, dtype=float)
    table = [list(values)]
    for level in range(1, len(values)):
        prev = table[-1]
        row = []
        for i in range(len(prev) - 1):
            r = h[i] / h[i + level]
            row.append((r * prev[i + 1] - prev[i]) / (r - 1.0))
        table.append(row)
    return table


def remainder(
    z: complex,
    cutoff: CutoffSpec,
    xi: float,
    trunc: HermiteTruncation,
    deltas=DEFAULT_DELTAS,
    rtol: float = 1e-6,
) -> FiberMatrix:
    """r_l(z, xi) = R0(z, xi) - sum_{k<=l} chi Pi_k / (xi^2 + k - z), Re z < a.

    On or near the real axis (|Im z| < min(deltas)) the value is the
    Richardson limit of the symmetric mean of r_l(z +- i delta).
    """
    z = complex(z)
    xi = float(xi)
    if z.real >= cutoff.a:
        raise ValueError(f"need Re z < a = {cutoff.a}")
    if cutoff.chi(xi) == 0.0:
        # no pole subtracted and xi^2 >= support > a > Re z keeps z off the fiber spectrum
        return FiberMatrix(xi, trunc, fiber_resolvent(z, xi, trunc, min_dist=0.0, sv_floor=0.0).entries)
    if abs(z.imag) >= min(deltas):
        return FiberMatrix(xi, trunc, _remainder_direct(z, cutoff, xi, trunc))
    # symmetric mean about z itself; r_l is holomorphic across the real axis
    vals = [
        0.5 * (_remainder_direct(z + 1j * d, cutoff, xi, trunc) + _remainder_direct(z - 1j * d, cutoff, xi, trunc))
        for d in deltas
    ]
    table = _richardson(vals, deltas)
    best = table[-1][0]
    prev = table[-2][-1]
    scale = max(1.0, np.linalg.norm(best))
    if np.linalg.norm(best - prev) > rtol * scale:
        raise ExtrapolationError(
            f"remainder extrapolation unsettled at z={z}, xi={xi}: {np.linalg.norm(best - prev) / scale:.1e}"
        )
    return FiberMatrix(xi, trunc, best)


def remainder_one_sided(
    lam: float,
    sign: int,
    cutoff: CutoffSpec,
    xi: float,
    trunc: HermiteTruncation,
    deltas=(1e-2, 5e-3, 2.5e-3, 1.25e-3),
) -> np.ndarray:
    """Limit of r_l(lam + sign*i*delta) from one side only (holomorphy probe)."""
    vals = [_remainder_direct(lam + sign * 1j * d, cutoff, float(xi), trunc) for d in deltas]
    return _richardson_odd(vals, deltas)[-1][0]


# -- Weyl symbols -----------------------------------------------------------

def _projection_kernel_diag(k: int, xi: float, v: np.ndarray, u: np.ndarray, half: float) -> np.ndarray:
    # K(v + half*u, v - half*u) with K(v, w) = phi_k(v + 2 i xi) phi_k(w + 2 i xi),
    # Gaussian factor exp(-half^2 u^2 / 2) stripped off.
    w = v[:, None] + 2j * xi
    a = w + half * u[None, :]
    b = w - half * u[None, :]
    from .hermite import _normalized_polys

    ha = _normalized_polys(k + 1, a)[k]
    hb = _normalized_polys(k + 1, b)[k]
    return np.exp(-(w**2) / 2.0) * ha * hb / np.sqrt(2.0 * np.pi)


def weyl_symbol_of_projection(
    k: int,
    xi: float,
    v,
    eta,
    cutoff: CutoffSpec | None = None,
    convention: str = "weyl",
    nodes: int = 160,
) -> np.ndarray:
    """Symbol of chi(xi) Pi_k^xi computed by quadrature from its integral kernel.

    ``convention="weyl"`` inverts the Weyl quantization
    a^w u(v) = (2 pi)^{-1} int int e^{i(v-v')eta} a((v+v')/2, eta) u(v') dv' deta,
    i.e. a(v, eta) = int e^{-i u eta} K(v + u/2, v - u/2) du.
    ``convention="half_shift"`` evaluates
    int e^{-i v' eta / 2} K(v + v', v - v') dv'.
    Returns an array of shape (len(v), len(eta)).
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    chi = 1.0 if cutoff is None else float(cutoff.chi(xi))
    t, wts = np.polynomial.hermite_e.hermegauss(nodes)  # weight exp(-t^2/2)
    if convention == "weyl":
        # u = 2t: exp(-u^2/8) = exp(-t^2/2), du = 2 dt, phase e^{-2 i t eta}
        half, scale, freq = 0.5, 2.0, 2.0
        u = 2.0 * t
    elif convention == "half_shift":
        # v' = t: exp(-v'^2/2), phase e^{-i t eta / 2}
        half, scale, freq = 1.0, 1.0, 0.5
        u = t
    else:
        raise ValueError(f"unknown convention {convention!r}")
    K = _projection_kernel_diag(k, xi, v, u, half)  # (len(v), nodes)
    phase = np.exp(-1j * freq * np.outer(t, eta))  # (nodes, len(eta))
    return chi * scale * (K * wts) @ phase


def b0_closed_form(v, xi, eta, chi: float = 1.0) -> np.ndarray:
    """2^{1/2} chi exp(-v^2 - eta^2 + 2 i v xi + 2 xi^2), n = 1, on a (v, eta) mesh."""
    v = np.atleast_1d(np.asarray(v, dtype=float))[:, None]
    eta = np.atleast_1d(np.asarray(eta, dtype=float))[None, :]
    return np.sqrt(2.0) * chi * np.exp(-(v**2) - eta**2 + 2j * v * xi + 2.0 * xi**2)


def b0_weyl_exact(v, xi, eta, chi: float = 1.0) -> np.ndarray:
    """Exact Weyl symbol of chi Pi_0^xi for phi_0 = (2 pi)^{-1/4} e^{-v^2/4}:
    2 chi exp(-(v + 2 i xi)^2 / 2 - 2 eta^2)."""
    v = np.atleast_1d(np.asarray(v, dtype=float))[:, None]
    eta = np.atleast_1d(np.asarray(eta, dtype=float))[None, :]
    return 2.0 * chi * np.exp(-((v + 2j * xi) ** 2) / 2.0 - 2.0 * eta**2)


def weyl_kernel_from_symbol(symbol, v, w, eta_max: float = 12.0, n_eta: int = 2401) -> np.ndarray:
    """Kernel K(v, w) = (2 pi)^{-1} int e^{i(v-w)eta} a((v+w)/2, eta) deta.

    ``symbol(m, eta)`` must accept 1-d midpoint and eta arrays and return a
    (len(m), len(eta)) array; the eta integral uses the trapezoid rule.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    eta = np.linspace(-eta_max, eta_max, n_eta)
    d_eta = eta[1] - eta[0]
    V, Wm = np.meshgrid(v, w, indexing="ij")
    mid = ((V + Wm) / 2.0).ravel()
    diff = (V - Wm).ravel()
    a = symbol(mid, eta)  # (len(mid), n_eta)
    K = (a * np.exp(1j * np.outer(diff, eta))).sum(axis=1) * d_eta / (2.0 * np.pi)
    return K.reshape(V.shape)


# -- semigroup ---------------------------------------------------------------

def fiber_semigroup(
    t: float,
    xi: float,
    trunc: HermiteTruncation,
    method: str = "expm",
    cond_cap: float = 1e8,
) -> FiberMatrix:
    """exp(-t P0(xi)) on the truncation."""
    if t < 0:
        raise ValueError("t must be non-negative")
    A = assemble_fiber(xi, trunc).entries
    if method == "eigen":
        w, V = np.linalg.eig(A)
        if np.linalg.cond(V) <= cond_cap:
            E = (V * np.exp(-t * w)) @ np.linalg.inv(V)
            return FiberMatrix(float(xi), trunc, E)
        warnings.warn(
            f"eigenvector condition exceeds {cond_cap:.0e} at xi={xi}; using scaling-and-squaring",
            ConditioningWarning,
            stacklevel=2,
        )
    elif method != "expm":
        raise ValueError(f"unknown method {method!r}")
    return FiberMatrix(float(xi), trunc, sla.expm(-t * A))


def hermite_grid_values(coeffs: np.ndarray, v: np.ndarray) -> np.ndarray:
    """sum_j coeffs[..., j] phi_j(v)."""
    return np.asarray(coeffs) @ hermite_functions(np.shape(coeffs)[-1], v)
