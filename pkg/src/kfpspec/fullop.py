"""Discretization of P = P0 - V'(x) d/dv on an x-grid times Hermite modes (n = 1).

States are arrays of shape (M, N): grid point first, Hermite mode second.
The flattened index of (m, j) is m * N + j, matching ``np.kron`` ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .hermite import HermiteTruncation, derivative_matrix, number_matrix, position_matrix

__all__ = [
    "Ass1Error",
    "PotentialSpec",
    "GridSpec",
    "GridOperator",
    "WeightedNormSpec",
    "Eigenpair",
    "load_sampled_potential",
    "assemble_full",
    "assemble_free",
    "fourier_derivative_matrix",
    "apply_weight",
    "weighted_norm",
    "l2_norm",
    "parity",
    "parity_matrix",
    "discrete_spectrum",
    "fiber_apply",
    "random_smooth_states",
    "subelliptic_ratios",
    "japanese",
]


class Ass1Error(ValueError):
    """The potential violates |V| + <x>|V'| <= C <x>^{-rho} on the grid."""


def japanese(x):
    return np.sqrt(1.0 + np.asarray(x, dtype=float) ** 2)


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid x_m = x_min + m h, h = (x_max - x_min) / M."""

    x_min: float
    x_max: float
    M: int
    scheme: str = "uniform"

    def __post_init__(self):
        if not (self.x_min < 0 < self.x_max):
            raise ValueError("need x_min < 0 < x_max")
        if self.M < 16:
            raise ValueError("need M >= 16")
        if self.scheme != "uniform":
            raise ValueError(f"unsupported scheme {self.scheme!r}")

    @classmethod
    def symmetric(cls, L: float, M: int) -> "GridSpec":
        return cls(-float(L), float(L), int(M))

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / self.M

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.M)

    @property
    def xi(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.M, d=self.h)

    @property
    def xi_spectral(self) -> np.ndarray:
        """Symbol of the assembled spectral d/dx (divided by i): Nyquist mode set to 0."""
        k = self.xi
        if self.M % 2 == 0:
            k[self.M // 2] = 0.0
        return k

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.x_min, self.x_max, self.M * factor, self.scheme)

    def padded(self, factor: int) -> "GridSpec":
        # same spacing, window grown symmetrically about the original one
        extra = (factor - 1) * self.M
        left = extra // 2
        return GridSpec(self.x_min - left * self.h, self.x_max + (extra - left) * self.h, self.M * factor)


@dataclass(frozen=True)
class PotentialSpec:
    """V(x) = g <x>^{-rho} (power_law), g exp(-x^2) (gaussian_bump), or tabulated.

    ``table`` for the sampled family is an array with columns (x, V, V');
    values are linearly interpolated and taken as zero outside the table.
    """

    family: str
    g: float = 0.0
    rho: float = 1.0
    table: np.ndarray | None = field(default=None, repr=False, compare=False)
    C: float | None = None

    def __post_init__(self):
        if self.family not in ("power_law", "gaussian_bump", "sampled"):
            raise ValueError(f"unknown potential family {self.family!r}")
        if self.rho <= -1:
            raise ValueError("need rho > -1")
        if self.family == "sampled":
            if self.table is None:
                raise ValueError("sampled potential needs a table")
            t = np.asarray(self.table, dtype=float)
            if t.ndim != 2 or t.shape[1] not in (2, 3):
                raise ValueError("table must have columns (x, V[, V'])")
            if np.any(np.diff(t[:, 0]) <= 0):
                raise ValueError("table x values must be strictly increasing")
            object.__setattr__(self, "table", t)

    @property
    def has_derivative(self) -> bool:
        return self.family != "sampled" or self.table.shape[1] == 3

    def V(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "power_law":
            return self.g * japanese(x) ** (-self.rho)
        if self.family == "gaussian_bump":
            return self.g * np.exp(-(x**2))
        return np.interp(x, self.table[:, 0], self.table[:, 1], left=0.0, right=0.0)

    def dV(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "power_law":
            return -self.g * self.rho * x * japanese(x) ** (-self.rho - 2.0)
        if self.family == "gaussian_bump":
            return -2.0 * self.g * x * np.exp(-(x**2))
        if not self.has_derivative:
            raise ValueError("sampled potential has no V' column; it is never differentiated numerically")
        return np.interp(x, self.table[:, 0], self.table[:, 2], left=0.0, right=0.0)

    def ass1_constant(self, x) -> float:
        """Smallest C with |V| + <x>|V'| <= C <x>^{-rho} at the points x."""
        x = np.asarray(x, dtype=float)
        lhs = np.abs(self.V(x))
        if self.has_derivative:
            lhs = lhs + japanese(x) * np.abs(self.dV(x))
        vals = lhs * japanese(x) ** self.rho
        if not np.all(np.isfinite(vals)):
            raise Ass1Error("potential is not finite on the grid")
        return float(vals.max()) if vals.size else 0.0

    def verify(self, x, long_range: bool = False) -> float:
        if long_range and self.rho <= 0:
            raise Ass1Error(f"resonance/LAP work needs rho > 0, got {self.rho}")
        c = self.ass1_constant(x)
        if self.C is not None and c > self.C * (1 + 1e-12):
            raise Ass1Error(f"(|V| + <x>|V'|) <x>^rho reaches {c:.3g} > C = {self.C}")
        return c


def load_sampled_potential(path, rho: float, g: float = 1.0, C: float | None = None) -> PotentialSpec:
    """Read a whitespace/comma separated (x, V[, V']) table; ``g`` scales V and V'."""
    text = Path(path).read_text()
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        rows.append([float(t) for t in line.replace(",", " ").split()])
    table = np.asarray(rows, dtype=float)
    if table.ndim != 2 or table.shape[1] not in (2, 3):
        raise ValueError(f"{path}: expected 2 or 3 numeric columns")
    table = table.copy()
    table[:, 1:] *= g
    return PotentialSpec("sampled", g=g, rho=rho, table=table, C=C)


@dataclass(frozen=True)
class WeightedNormSpec:
    """H_type: (2 - Delta_v + v^2 + <D_x>^{2/3})^{r/2} <x>^s;
    G_type: <1 - Delta_v + v^2>^{r/2} <x>^s."""

    kind: str = "H_type"
    r: float = 0.0
    s: float = 0.0

    def __post_init__(self):
        if self.kind not in ("H_type", "G_type"):
            raise ValueError(f"unknown weight kind {self.kind!r}")


@dataclass
class Eigenpair:
    value: complex
    vector: np.ndarray
    residual: float
    near_essential: bool


def fourier_derivative_matrix(M: int, h: float) -> np.ndarray:
    """Real antisymmetric spectral d/dx on the periodic grid (Nyquist mode dropped)."""
    k = 2.0 * np.pi * np.fft.fftfreq(M, d=h)
    if M % 2 == 0:
        k[M // 2] = 0.0
    F = np.fft.fft(np.eye(M), axis=0)
    D = np.fft.ifft(1j * k[:, None] * F, axis=0).real
    return 0.5 * (D - D.T)


def _fd_derivative_matrix(M: int, h: float) -> np.ndarray:
    # fourth-order periodic central differences
    D = np.zeros((M, M))
    for i in range(M):
        D[i, (i + 1) % M] += 8.0
        D[i, (i - 1) % M] -= 8.0
        D[i, (i + 2) % M] -= 1.0
        D[i, (i - 2) % M] += 1.0
    return D / (12.0 * h)


@dataclass
class GridOperator:
    """Sparse P = P0 + W on grid x modes, plus the pieces it was built from."""

    grid: GridSpec
    trunc: HermiteTruncation
    potential: PotentialSpec
    P0: sp.csr_matrix
    W: sp.csr_matrix
    derivative: str = "spectral"

    @property
    def matrix(self) -> sp.csr_matrix:
        return (self.P0 + self.W).tocsr()

    @property
    def shape(self):
        n = self.grid.M * self.trunc.N
        return (n, n)

    def apply(self, u: np.ndarray) -> np.ndarray:
        M, N = self.grid.M, self.trunc.N
        return (self.matrix @ np.asarray(u).reshape(M * N, -1)).reshape(np.shape(u))


def assemble_free(grid: GridSpec, trunc: HermiteTruncation, derivative: str = "spectral") -> sp.csr_matrix:
    N = trunc.N
    if derivative == "spectral":
        Dx = fourier_derivative_matrix(grid.M, grid.h)
    elif derivative == "fd":
        Dx = _fd_derivative_matrix(grid.M, grid.h)
    else:
        raise ValueError(f"unknown derivative scheme {derivative!r}")
    Dx[np.abs(Dx) < 1e-15 * np.abs(Dx).max()] = 0.0
    P0 = sp.kron(sp.identity(grid.M), sp.csr_matrix(number_matrix(N))) + sp.kron(
        sp.csr_matrix(Dx), sp.csr_matrix(position_matrix(N))
    )
    return P0.astype(complex).tocsr()


def assemble_full(
    pot: PotentialSpec,
    grid: GridSpec,
    trunc: HermiteTruncation,
    derivative: str = "spectral",
    long_range: bool = False,
) -> GridOperator:
    """Assemble P = P0 + W, W = -V'(x) d/dv, after checking the potential bound."""
    pot.verify(grid.x, long_range=long_range)
    P0 = assemble_free(grid, trunc, derivative)
    W = sp.kron(sp.diags(-pot.dV(grid.x)), sp.csr_matrix(derivative_matrix(trunc.N))).astype(complex).tocsr()
    W.eliminate_zeros()
    return GridOperator(grid, trunc, pot, P0, W, derivative)


# -- fiberwise helpers --------------------------------------------------------

def fiber_apply(blocks: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Apply per-frequency N x N blocks (shape (M, N, N)) to u of shape (M, N, ...)."""
    uh = np.fft.fft(u, axis=0)
    if u.ndim == 2:
        vh = np.einsum("pij,pj->pi", blocks, uh)
    else:
        vh = np.einsum("pij,pj...->pi...", blocks, uh)
    return np.fft.ifft(vh, axis=0)


def _vsquared(N: int) -> np.ndarray:
    X = position_matrix(N + 2)
    return (X @ X)[:N, :N]


def l2_norm(u: np.ndarray, grid: GridSpec) -> float:
    return float(np.sqrt(grid.h * np.sum(np.abs(u) ** 2)))


def apply_weight(u: np.ndarray, w: WeightedNormSpec, grid: GridSpec) -> np.ndarray:
    """Apply the weight operator defining the H^{r,s} or G^{r,s} norm."""
    u = np.asarray(u)
    M, N = u.shape[:2]
    out = u * japanese(grid.x)[:, None] ** w.s if w.s != 0 else u.astype(complex)
    if w.r == 0:
        return out
    # harmonic part -Delta_v + v^2 = (number + 1/2) + 3 v^2 / 4
    Hv = number_matrix(N) + 0.5 * np.eye(N) + 0.75 * _vsquared(N)
    if w.kind == "H_type":
        if int(w.r) != w.r or int(w.r) % 2:
            raise ValueError("H_type weights are realized for even r only")
        p = int(w.r) // 2
        xi = grid.xi
        blocks = np.empty((M, N, N), dtype=complex)
        for i, x in enumerate(xi):
            A = Hv + (2.0 + japanese(x) ** (2.0 / 3.0)) * np.eye(N)
            blocks[i] = np.linalg.matrix_power(A, p) if p >= 0 else np.linalg.matrix_power(np.linalg.inv(A), -p)
        return fiber_apply(blocks, out)
    A = Hv + np.eye(N)
    lam, V = np.linalg.eigh(A)
    B = (V * (1.0 + lam**2) ** (w.r / 4.0)) @ V.T
    return out @ B.T


def weighted_norm(u: np.ndarray, w: WeightedNormSpec, grid: GridSpec) -> float:
    return l2_norm(apply_weight(u, w, grid), grid)


def parity(u: np.ndarray) -> np.ndarray:
    """J f(x, v) = f(x, -v); phi_j is even or odd with j."""
    u = np.asarray(u)
    sign = (-1.0) ** np.arange(u.shape[1])
    return u * sign.reshape((1, -1) + (1,) * (u.ndim - 2))


def parity_matrix(M: int, N: int) -> sp.csr_matrix:
    return sp.kron(sp.identity(M), sp.diags((-1.0) ** np.arange(N))).tocsr()


# -- spectrum ---------------------------------------------------------------

def discrete_spectrum(
    op: GridOperator,
    region=(-np.inf, np.inf, -np.inf, np.inf),
    margin: float = 0.05,
    dense_limit: int = 4096,
    n_eigs: int = 40,
    sigma: complex | None = None,
    residual_tol: float = 1e-8,
) -> list[Eigenpair]:
    """Eigenpairs of the grid operator inside ``region`` = (re_min, re_max, im_min, im_max).

    Dense solve up to ``dense_limit`` unknowns, shift-invert Arnoldi above.
    Pairs within ``margin`` of [0, inf) are returned with near_essential=True.
    """
    A = op.matrix
    n = A.shape[0]
    if n <= dense_limit:
        vals, vecs = sla.eig(A.toarray())
    else:
        if sigma is None:
            re0 = region[0] if np.isfinite(region[0]) else -1.0
            re1 = region[1] if np.isfinite(region[1]) else re0 + 2.0
            im0 = region[2] if np.isfinite(region[2]) else 0.0
            im1 = region[3] if np.isfinite(region[3]) else 0.0
            sigma = complex(0.5 * (re0 + re1), 0.5 * (im0 + im1))
        try:
            vals, vecs = spla.eigs(A.tocsc(), k=min(n_eigs, n - 2), sigma=sigma, which="LM")
        except spla.ArpackNoConvergence as exc:
            raise RuntimeError(f"shift-invert Arnoldi did not converge: {exc}") from exc
    re0, re1, im0, im1 = region
    out = []
    for lam, v in zip(vals, vecs.T):
        if not (re0 <= lam.real <= re1 and im0 <= lam.imag <= im1):
            continue
        v = v / np.linalg.norm(v)
        res = float(np.linalg.norm(A @ v - lam * v))
        if res > residual_tol:
            continue
        near = lam.real >= -margin and abs(lam.imag) <= margin
        out.append(Eigenpair(complex(lam), v.reshape(op.grid.M, op.trunc.N), res, bool(near)))
    out.sort(key=lambda e: (e.value.real, e.value.imag))
    return out


# -- subelliptic diagnostics ----------------------------------------------------

def random_smooth_states(count: int, seed: int = 0, modes: int = 6, bumps: int = 3):
    """Continuum-defined random states: sums of modulated Gaussians times phi_j.

    Returns a list of callables ``state(grid, N) -> (M, N) array`` so the same
    state can be sampled on several discretizations.
    """
    rng = np.random.default_rng(seed)
    states = []
    for _ in range(count):
        centers = rng.uniform(-4.0, 4.0, size=bumps)
        widths = rng.uniform(0.7, 2.0, size=bumps)
        freqs = rng.uniform(-2.0, 2.0, size=bumps)
        amps = rng.normal(size=(bumps, modes)) + 1j * rng.normal(size=(bumps, modes))
        amps /= (1.0 + np.arange(modes)) ** 1.5

        def state(grid, N, centers=centers, widths=widths, freqs=freqs, amps=amps):
            if N < modes + 2:
                raise ValueError(f"need N >= {modes + 2} to represent the test states exactly")
            x = grid.x[:, None]
            g = np.exp(-((x - centers) ** 2) / (2 * widths**2) + 1j * freqs * x)  # (M, bumps)
            u = np.zeros((grid.M, N), dtype=complex)
            u[:, :modes] = g @ amps
            return u

        states.append(state)
    return states


def subelliptic_ratios(u: np.ndarray, grid: GridSpec) -> tuple[float, float]:
    """Left and right sides of ||Delta_v u|| + ||v^2 u|| + ||<D_x>^{2/3} u|| <= C(||P0 u|| + ||u||).

    ``u`` must vanish in its top two Hermite modes so v^2 and Delta_v act exactly.
    """
    M, N = u.shape
    if np.any(u[:, N - 2:] != 0):
        raise ValueError("top two modes must be empty")
    V2 = _vsquared(N)
    # -Delta_v = number + 1/2 - v^2 / 4
    lap = -(number_matrix(N) + 0.5 * np.eye(N) - 0.25 * V2)
    d_v = l2_norm(u @ lap.T, grid)
    v2 = l2_norm(u @ V2.T, grid)
    xi = grid.xi
    uh = np.fft.fft(u, axis=0)
    dx = l2_norm(np.fft.ifft(japanese(xi)[:, None] ** (2.0 / 3.0) * uh, axis=0), grid)
    X = position_matrix(N)
    p0h = uh @ number_matrix(N).T + 1j * xi[:, None] * (uh @ X.T)
    p0 = l2_norm(np.fft.ifft(p0h, axis=0), grid)
    return d_v + v2 + dx, p0 + l2_norm(u, grid)
