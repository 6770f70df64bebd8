"""Exponential-decay machinery: the rate tau(z), the conjugated perturbation Q_r,
shell-maximum decay fits and polynomial moments.

The weight is phi_r(x, v) = chi_r(<x>) + chi_r(|v|^2) with chi_r(s) = r chi(s / r),
where chi(s) = s on [0, 1], chi = 3/2 on [2, inf) and a quintic joins them.
Conjugating P0 by exp(a phi_r) adds

    Q_r = a (4 chi_r'(v^2) v d_v + Delta_v chi_r(v^2) - a |d_v chi_r(v^2)|^2
             - chi_r'(<x>) v x / <x>).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.special import roots_legendre

from .fullop import GridSpec, japanese, l2_norm
from .hermite import (
    HermiteTruncation,
    derivative_matrix,
    hermite_function_derivatives,
    hermite_functions,
    position_matrix,
)
from .resolvent import ThresholdError, _dist_to_halfline, _fiber_inverse_blocks

__all__ = [
    "DEFAULT_C0",
    "chi",
    "chi_r",
    "DecayReport",
    "DecayFit",
    "MomentTable",
    "FreeResolventBlocks",
    "tau",
    "tau_norms",
    "conjugation_operator",
    "conjugation_check",
    "conjugated_inverse_norm",
    "r_window_limit",
    "decay_fit",
    "moment_growth",
    "exponential_state",
    "decay_report",
    "SHELL_CSV_HEADER",
]

DEFAULT_C0 = 0.05
NEAR_SPECTRUM = 1e-4

# quintic on [1, 2]: chi(1) = 1, chi'(1) = 1, chi''(1) = 0, chi(2) = 3/2, chi'(2) = chi''(2) = 0
_Q = np.polynomial.Polynomial(
    np.linalg.solve(
        np.array([
            [1, 0, 0, 0, 0, 0],
            [0, 1, 0, 0, 0, 0],
            [0, 0, 2, 0, 0, 0],
            [1, 1, 1, 1, 1, 1],
            [0, 1, 2, 3, 4, 5],
            [0, 0, 2, 6, 12, 20],
        ], dtype=float),
        np.array([1.0, 1.0, 0.0, 1.5, 0.0, 0.0]),
    )
)  # in the variable s - 1
_DQ = _Q.deriv()
_D2Q = _DQ.deriv()


def chi(s, deriv: int = 0):
    """The profile chi or its first two derivatives, for s >= 0."""
    s = np.asarray(s, dtype=float)
    mid = (s > 1.0) & (s < 2.0)
    t = s - 1.0
    if deriv == 0:
        out = np.where(s <= 1.0, s, 1.5)
        return np.where(mid, _Q(t), out)
    if deriv == 1:
        return np.where(mid, _DQ(t), np.where(s <= 1.0, 1.0, 0.0))
    if deriv == 2:
        return np.where(mid, _D2Q(t), 0.0)
    raise ValueError("deriv must be 0, 1 or 2")


def chi_r(s, r: float, deriv: int = 0):
    """chi_r(s) = r chi(s / r) and its derivatives."""
    return r ** (1 - deriv) * chi(np.asarray(s, dtype=float) / r, deriv)


# -- Velocity matrices with piecewise-smooth symbols ------------------------------

def _velocity_rule(N: int, breaks, order: int = 24) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes on |v| <= 2 sqrt(N) + 14 split at +-breaks."""
    vmax = 2.0 * np.sqrt(N) + 14.0
    pts = [b for b in breaks if 0 < b < vmax]
    edges = np.unique(np.concatenate([
        np.arange(-vmax, vmax + 1e-12, 1.0),
        np.asarray(pts, dtype=float),
        -np.asarray(pts, dtype=float),
    ]))
    x, w = roots_legendre(order)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return nodes, weights


def _velocity_matrix(func, N: int, breaks, deriv: bool = False) -> np.ndarray:
    """<phi_i, m(v) T phi_j> with T = 1 or d/dv, for piecewise-smooth m."""
    v, w = _velocity_rule(N, breaks)
    left = hermite_functions(N, v)
    right = hermite_function_derivatives(N, v) if deriv else left
    return (left * (w * func(v))) @ right.T


# -- Resolvent of P0 away from [0, inf) -----------------------------------------------

@dataclass
class FreeResolventBlocks:
    """R0(z) on a periodic grid as per-frequency blocks, compressed from ``fiber_N`` modes."""

    z: complex
    grid: GridSpec
    trunc: HermiteTruncation
    fiber_N: int
    blocks: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.z = complex(self.z)
        if _dist_to_halfline(self.z) < NEAR_SPECTRUM:
            raise ThresholdError(f"z={self.z} is within {NEAR_SPECTRUM} of the spectrum [0, inf)")
        ft = HermiteTruncation(max(self.fiber_N, self.trunc.N))
        self.blocks = _fiber_inverse_blocks(self.z, self.grid.xi_spectral, ft, self.trunc.N)

    def apply(self, u: np.ndarray, adjoint: bool = False) -> np.ndarray:
        B = np.conj(np.swapaxes(self.blocks, 1, 2)) if adjoint else self.blocks
        return np.fft.ifft(np.einsum("pij,pj->pi", B, np.fft.fft(u, axis=0)), axis=0)


def _compressed_product(A_factory, N: int, extra: int = 2) -> np.ndarray:
    big = A_factory(N + extra)
    return big[:N, :N]


def _opnorm(matvec, rmatvec, shape: tuple[int, int]) -> float:
    """Largest singular value of an (M, N)-state map given as callables."""
    M, N = shape
    n = M * N

    def mv(x):
        return matvec(x.reshape(M, N)).ravel()

    def rmv(x):
        return rmatvec(x.reshape(M, N)).ravel()

    op = spla.LinearOperator((n, n), matvec=mv, rmatvec=rmv, dtype=complex)
    s = spla.svds(op, k=1, return_singular_vectors=False, tol=1e-10, random_state=0)
    return float(s[0])


def tau_norms(z, trunc: HermiteTruncation, grid: GridSpec, fiber_N: int | None = None,
              R0: FreeResolventBlocks | None = None) -> dict:
    """The three operator norms entering tau(z)."""
    N = trunc.N
    R0 = R0 or FreeResolventBlocks(z, grid, trunc, fiber_N or N + 16)
    B = R0.blocks
    vdv = _compressed_product(lambda n: position_matrix(n) @ derivative_matrix(n), N)
    r0 = float(np.max(np.linalg.norm(B, 2, axis=(1, 2))))
    vdv_r0 = float(np.max(np.linalg.norm(np.einsum("ij,pjk->pik", vdv, B), 2, axis=(1, 2))))
    X = position_matrix(N)
    w = grid.x / japanese(grid.x)
    vx_r0 = _opnorm(
        lambda u: w[:, None] * (R0.apply(u) @ X.T),
        lambda u: R0.apply(w[:, None] * (u @ X.T), adjoint=True),
        (grid.M, N),
    )
    return {"R0": r0, "v_dv_R0": vdv_r0, "v_x_R0": vx_r0}


def tau(z, trunc: HermiteTruncation, grid: GridSpec, fiber_N: int | None = None) -> float:
    """min{(||v d_v R0|| + ||v x/<x> R0|| + ||R0||)^{-1}, ||R0||^{-1/2}}."""
    n = tau_norms(z, trunc, grid, fiber_N)
    return float(min(1.0 / (n["v_dv_R0"] + n["v_x_R0"] + n["R0"]), n["R0"] ** -0.5))


# -- Conjugation ------------------------------------------------------------------------

def r_window_limit(grid: GridSpec) -> float:
    """Largest r for which chi_r(<x>) still changes inside the grid window."""
    return float(np.max(japanese(grid.x)))


@dataclass
class _ConjugationParts:
    Qv: np.ndarray  # velocity part, acts as u @ Qv.T
    cx: np.ndarray  # x-coefficient multiplying v

    def apply(self, u, N):
        return u @ self.Qv.T + self.cx[:, None] * (u @ position_matrix(N).T)

    def adjoint(self, u, N):
        return u @ self.Qv.conj() + np.conj(self.cx)[:, None] * (u @ position_matrix(N).T)


def conjugation_operator(a: float, r: float, trunc: HermiteTruncation, grid: GridSpec) -> _ConjugationParts:
    """Q_r with amplitude a, compressed to the truncation and sampled on the grid."""
    if r < 1:
        raise ValueError("r must be >= 1")
    if r > r_window_limit(grid):
        raise OverflowError(f"r={r} beyond the grid window limit {r_window_limit(grid):.3f}")
    N = trunc.N
    breaks = (np.sqrt(r), np.sqrt(2.0 * r))
    d1 = lambda v: chi_r(v * v, r, 1)
    d2 = lambda v: chi_r(v * v, r, 2)
    drift = _velocity_matrix(lambda v: 4.0 * d1(v) * v, N, breaks, deriv=True)
    lap = _velocity_matrix(lambda v: 2.0 * d1(v) + 4.0 * v * v * d2(v), N, breaks)
    grad2 = _velocity_matrix(lambda v: 4.0 * v * v * d1(v) ** 2, N, breaks)
    Qv = a * (drift + lap - a * grad2)
    jx = japanese(grid.x)
    cx = -a * chi_r(jx, r, 1) * grid.x / jx
    return _ConjugationParts(Qv, cx)


def conjugation_check(z, c0: float, r: float, trunc: HermiteTruncation, grid: GridSpec,
                      fiber_N: int | None = None, tau_value: float | None = None) -> float:
    """||Q_r R0(z)|| with a = c0 tau(z)."""
    if c0 < 0:
        raise ValueError("c0 must be non-negative")
    if c0 == 0:
        return 0.0
    N = trunc.N
    R0 = FreeResolventBlocks(z, grid, trunc, fiber_N or N + 16)
    if tau_value is None:
        n = tau_norms(z, trunc, grid, R0=R0)
        tau_value = min(1.0 / (n["v_dv_R0"] + n["v_x_R0"] + n["R0"]), n["R0"] ** -0.5)
    Q = conjugation_operator(c0 * tau_value, r, trunc, grid)
    return _opnorm(
        lambda u: Q.apply(R0.apply(u), N),
        lambda u: R0.apply(Q.adjoint(u, N), adjoint=True),
        (grid.M, N),
    )


def conjugated_inverse_norm(z, c0: float, r: float, trunc: HermiteTruncation, grid: GridSpec,
                            fiber_N: int | None = None) -> tuple[float, float]:
    """||(P0 + Q_r - z)^{-1}|| = ||R0 (1 + Q_r R0)^{-1}|| and its Neumann bound ||R0|| / (1 - margin).

    Dense; intended for small grids.
    """
    N = trunc.N
    M = grid.M
    R0 = FreeResolventBlocks(z, grid, trunc, fiber_N or N + 16)
    n = tau_norms(z, trunc, grid, R0=R0)
    t = min(1.0 / (n["v_dv_R0"] + n["v_x_R0"] + n["R0"]), n["R0"] ** -0.5)
    Q = conjugation_operator(c0 * t, r, trunc, grid)
    eye = np.eye(M * N).reshape(M * N, M, N)
    R = np.stack([R0.apply(e).ravel() for e in eye], axis=1)
    QR = np.stack([Q.apply(R[:, k].reshape(M, N), N).ravel() for k in range(M * N)], axis=1)
    margin = np.linalg.norm(QR, 2)
    inv = R @ np.linalg.inv(np.eye(M * N) + QR)
    return float(np.linalg.norm(inv, 2)), float(n["R0"] / (1.0 - margin)) if margin < 1 else np.inf


# -- Decay fits ------------------------------------------------------------------------

SHELL_CSV_HEADER = ["phi", "shell_max"]


@dataclass
class DecayFit:
    c: float
    quality: float
    shells: np.ndarray
    maxima: np.ndarray
    floor: float
    non_decaying: bool


def _velocity_samples(N: int, count: int = 241) -> np.ndarray:
    vmax = 2.0 * np.sqrt(N) + 4.0
    return np.linspace(-vmax, vmax, count)


def exponential_state(grid: GridSpec, trunc: HermiteTruncation, rate: float = 1.0) -> np.ndarray:
    """Hermite coefficients of exp(-rate (<x> + v^2)), normalized in L^2."""
    N = trunc.N
    v, w = _velocity_rule(N, ())
    prof = hermite_functions(N, v) @ (w * np.exp(-rate * v * v))
    u = np.exp(-rate * japanese(grid.x))[:, None] * prof[None, :]
    return u / l2_norm(u, grid)


def decay_fit(u: np.ndarray, grid: GridSpec, trunc: HermiteTruncation, shell_width: float = 0.5,
              floor: float = 1e-12, min_rate: float = 0.05) -> DecayFit:
    """Fit log(shell maxima of |u|) against phi = <x> + v^2.

    Shells are kept while they lie inside the sampled window and their maxima
    exceed ``floor`` relative to the peak, raised to the Hermite tail level
    (the truncation cannot resolve values below it).  Shells before the
    largest shell maximum are left out of the fit.
    """
    u = np.asarray(u)
    N = trunc.N
    v = _velocity_samples(N)
    vals = np.abs(u @ hermite_functions(N, v))
    phi = japanese(grid.x)[:, None] + (v * v)[None, :]
    peak = vals.max()
    if peak == 0:
        raise ValueError("zero state")
    tail = np.max(np.abs(u[:, -2:])) / np.max(np.abs(u))
    level = max(floor, 10.0 * tail)
    phi_top = min(np.max(japanese(grid.x)), v[-1] ** 2)
    edges = np.arange(1.0, phi_top + 1e-12, shell_width)
    centers, maxima = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (phi >= a) & (phi < b)
        if not sel.any():
            continue
        m = vals[sel].max() / peak
        if m < level:
            break
        centers.append(0.5 * (a + b))
        maxima.append(m)
    # the decay rate is read off beyond the largest shell maximum
    k = int(np.argmax(maxima)) if maxima else 0
    centers = np.asarray(centers[k:])
    maxima = np.asarray(maxima[k:])
    if centers.size < 3:
        raise ValueError("insufficient dynamic range for a decay fit")
    y = np.log(maxima)
    slope, icpt = np.polyfit(centers, y, 1)
    resid = y - (slope * centers + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    quality = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    c = max(-slope, 0.0)
    return DecayFit(float(c), float(quality), centers, maxima, float(level), bool(c < min_rate))


# -- Polynomial moments -------------------------------------------------------------------

@dataclass
class MomentTable:
    s: np.ndarray
    norms: np.ndarray
    ratios: np.ndarray
    boundary_fraction: np.ndarray
    window_dominated: np.ndarray


def moment_growth(u: np.ndarray, s_list, grid: GridSpec, trunc: HermiteTruncation,
                  boundary: float = 0.1) -> MomentTable:
    """||(<x> + <v>)^s u|| for each s, with window-domination flags.

    The boundary layer is the outer ``boundary`` fraction of the x-window
    together with the outer velocity nodes; a moment is window-dominated when
    that layer carries more than half of its squared norm.
    """
    s_arr = np.asarray(s_list, dtype=float)
    if s_arr.size == 0 or np.any(np.diff(s_arr) <= 0):
        raise ValueError("s_list must be non-empty and increasing")
    N = trunc.N
    v, w = trunc.nodes, trunc.weights / np.sqrt(2.0 * np.pi)
    vals = u @ trunc._poly_at_nodes  # polynomial parts; the Gaussian factor is in w
    dens = np.abs(vals) ** 2 * w[None, :] * grid.h
    weight = japanese(grid.x)[:, None] + japanese(v)[None, :]
    half = 0.5 * (grid.x_max - grid.x_min)
    center = 0.5 * (grid.x_max + grid.x_min)
    edge = (np.abs(grid.x - center) >= (1.0 - boundary) * half)[:, None] | (
        np.abs(v) >= (1.0 - boundary) * np.abs(v).max()
    )[None, :]
    norms, frac = [], []
    for s in s_arr:
        d = dens * weight ** (2.0 * s)
        tot = d.sum()
        norms.append(np.sqrt(tot))
        frac.append(d[edge].sum() / tot)
    norms = np.asarray(norms)
    frac = np.asarray(frac)
    ratios = norms[1:] / norms[:-1]
    return MomentTable(s_arr, norms, ratios, frac, frac > 0.5)


# -- Report -------------------------------------------------------------------------------

@dataclass
class DecayReport:
    eigenvalue: complex
    fitted_rate: float
    fit_quality: float
    tau_value: float
    conjugation_margin: float
    c0: float
    r_values: tuple
    moment_table: dict

    def __post_init__(self):
        if self.fitted_rate < 0:
            raise ValueError("fitted_rate must be non-negative")

    @property
    def hypothesis_satisfied(self) -> bool:
        return self.conjugation_margin < 1.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["eigenvalue"] = [float(np.real(self.eigenvalue)), float(np.imag(self.eigenvalue))]
        d["hypothesis_satisfied"] = self.hypothesis_satisfied
        return d


def decay_report(eigenvalue, u: np.ndarray, grid: GridSpec, trunc: HermiteTruncation,
                 c0: float = DEFAULT_C0, r_values=(1.0, 2.0, 4.0, 8.0), s_list=(0.5, 1.0, 1.5, 2.0),
                 fiber_N: int | None = None) -> DecayReport:
    """Fit, tau, worst conjugation margin over r and moments for one eigenpair."""
    u = np.asarray(u) / l2_norm(u, grid)
    fit = decay_fit(u, grid, trunc)
    t = tau(eigenvalue, trunc, grid, fiber_N)
    margin = max(conjugation_check(eigenvalue, c0, r, trunc, grid, fiber_N, tau_value=t) for r in r_values)
    mt = moment_growth(u, s_list, grid, trunc)
    table = {
        "s": mt.s.tolist(),
        "norms": mt.norms.tolist(),
        "boundary_fraction": mt.boundary_fraction.tolist(),
        "window_dominated": mt.window_dominated.tolist(),
    }
    return DecayReport(complex(eigenvalue), fit.c, fit.quality, t, margin, c0, tuple(r_values), table)
