"""The free semigroup exp(-t P0), observable evolution and smoothing integrals.

Everything is fiberwise: a state of shape (M, N) is Fourier transformed in x
and each frequency block is propagated by exp(-t P0(xi)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.special import roots_legendre

from .fiber import assemble_fiber, riesz_projection
from .fullop import GridSpec, l2_norm, random_smooth_states
from .hermite import HermiteTruncation, derivative_matrix, position_matrix

__all__ = [
    "T_MAX",
    "EvolutionPlan",
    "evolve",
    "semigroup_blocks",
    "OBSERVABLES",
    "commutation_check",
    "commutation_table",
    "COMMUTATION_CSV_HEADER",
    "x1_coefficient_order",
    "smoothing_integral",
    "semigroup_power_norms",
    "ProjectionSum",
    "projection_sum_bound",
    "projection_sum_rhs",
    "PROJECTION_CSV_HEADER",
]

T_MAX = 10.0
OBSERVABLES = ("v", "d_v", "x")


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= T_MAX:
        raise ValueError(f"t={t} outside [0, {T_MAX}]")
    return t


def _fiber_stack(xi: np.ndarray, N: int) -> np.ndarray:
    X = position_matrix(N)
    A = np.empty((xi.size, N, N), dtype=complex)
    A[:] = np.diag(np.arange(N, dtype=float))
    A += 1j * xi[:, None, None] * X
    return A


def semigroup_blocks(t: float, xi: np.ndarray, N: int, method: str = "scaling_squaring") -> np.ndarray:
    """exp(-t P0(xi)) for every xi, shape (len(xi), N, N)."""
    t = _check_time(t)
    A = _fiber_stack(np.asarray(xi, dtype=float), N)
    if method == "scaling_squaring":
        return sla.expm(-t * A)
    if method == "eigen":
        w, V = np.linalg.eig(A)
        return np.einsum("pij,pj,pjk->pik", V, np.exp(-t * w), np.linalg.inv(V))
    raise ValueError(f"unknown method {method!r}")


@dataclass
class EvolutionPlan:
    """Times, grid and truncation for repeated applications of exp(-t P0).

    ``xi_grid`` is the spectral frequency set of ``grid`` (Nyquist mode
    dropped, matching the spectral x-derivative).  Blocks are cached per t.
    """

    grid: GridSpec
    trunc: HermiteTruncation
    times: tuple = ()
    method: str = "scaling_squaring"
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("times must be increasing")
        for t in times:
            _check_time(t)
        self.times = times
        if self.method not in ("eigen", "scaling_squaring"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def xi_grid(self) -> np.ndarray:
        return self.grid.xi_spectral

    def blocks(self, t: float) -> np.ndarray:
        key = float(t)
        if key not in self._cache:
            self._cache[key] = semigroup_blocks(key, self.xi_grid, self.trunc.N, self.method)
        return self._cache[key]


def evolve(t: float, state: np.ndarray, plan: EvolutionPlan) -> np.ndarray:
    """exp(-t P0) state for a state of shape (M, N)."""
    t = _check_time(t)
    if t == 0.0:
        return np.array(state, dtype=complex)
    uh = np.fft.fft(state, axis=0)
    return np.fft.ifft(np.einsum("pij,pj->pi", plan.blocks(t), uh), axis=0)


# -- Observable evolution -----------------------------------------------------

def _dx(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.fft.ifft(1j * grid.xi_spectral[:, None] * np.fft.fft(u, axis=0), axis=0)


def _observable(name: str, u: np.ndarray, grid: GridSpec) -> np.ndarray:
    N = u.shape[1]
    if name == "v":
        return u @ position_matrix(N).T
    if name == "d_v":
        return u @ derivative_matrix(N).T
    if name == "x":
        return grid.x[:, None] * u
    raise ValueError(f"observable must be one of {OBSERVABLES}")


def _transported(name: str, s: float, u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """The operator applied under exp(-t P0) on the right-hand side of the identity."""
    v = _observable("v", u, grid)
    dv = _observable("d_v", u, grid)
    dx = _dx(u, grid)
    ch, sh = np.cosh(s), np.sinh(s)
    if name == "v":
        return v * ch - 2.0 * dv * sh + 2.0 * (ch - 1.0) * dx
    if name == "d_v":
        return -0.5 * (v * sh - 2.0 * dv * ch + 2.0 * dx * sh)
    if name == "x":
        return _observable("x", u, grid) + v * sh - 2.0 * (ch - 1.0) * dv + 2.0 * (sh - s) * dx
    raise ValueError(f"observable must be one of {OBSERVABLES}")


def commutation_check(t: float, s: float, observable: str, test_states, plan: EvolutionPlan) -> float:
    """Max relative residual of exp(-(t-s)P0) O exp(-sP0) = exp(-tP0) O_s over the test states.

    ``test_states`` holds (M, N) arrays or callables ``state(grid, N)``.
    """
    t = _check_time(t)
    s = float(s)
    if not 0.0 <= s <= t:
        raise ValueError("need 0 <= s <= t")
    grid, N = plan.grid, plan.trunc.N
    worst = 0.0
    for st in test_states:
        u = st(grid, N) if callable(st) else np.asarray(st)
        lhs = evolve(t - s, _observable(observable, evolve(s, u, plan), grid), plan)
        rhs = evolve(t, _transported(observable, s, u, grid), plan)
        worst = max(worst, l2_norm(lhs - rhs, grid) / max(l2_norm(lhs, grid), 1e-300))
    return worst


COMMUTATION_CSV_HEADER = ["t", "s", "observable", "residual"]


def commutation_table(pairs, plan: EvolutionPlan, test_states=None, observables=OBSERVABLES) -> list[tuple]:
    """Rows (t, s, observable, residual) over the (t, s) pairs."""
    if test_states is None:
        test_states = random_smooth_states(3, seed=0)
    return [
        (float(t), float(s), name, commutation_check(t, s, name, test_states, plan))
        for t, s in pairs
        for name in observables
    ]


def x1_coefficient_order(s_values) -> float:
    """Fitted exponent p in 2(sinh s - s) ~ C s^p over small s."""
    s = np.asarray(s_values, dtype=float)
    c = 2.0 * (np.sinh(s) - s)
    slope, _ = np.polyfit(np.log(s), np.log(c), 1)
    return float(slope)


# -- Smoothing integrals ------------------------------------------------------

def _time_rule(T: float, panels: int, order: int, grading: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on [0, T], geometrically graded toward t = 0."""
    edges = np.concatenate([[0.0], T * grading ** np.arange(panels - 1, -1, -1)])
    x, w = roots_legendre(order)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def smoothing_integral(theta, k: int, T: float, trunc: HermiteTruncation, xi_grid,
                       vanishing_order: int | None = None, panels: int = 24, order: int = 16,
                       strict: bool = True) -> float:
    """max over xi of ||(P0(xi) + 1)^{k+1} int_0^T exp(-t P0(xi)) theta(t) dt||.

    ``vanishing_order`` m certifies theta^{(j)}(0) = 0 for j < m.  The bound
    is claimed for m >= k + 1, and for k = 0 without any vanishing; with
    ``strict=False`` other cases are evaluated as exploratory output.
    """
    if vanishing_order is None:
        raise ValueError("a vanishing-order certificate for theta at 0 is required")
    if T <= 3.0:
        raise ValueError("T must exceed 3")
    if strict and k >= 1 and vanishing_order < k + 1:
        raise ValueError(f"theta must vanish to order {k + 1} at 0 for k={k}")
    t, w = _time_rule(float(T), panels, order)
    wt = w * np.asarray([theta(ti) for ti in t], dtype=float)
    N = trunc.N
    worst = 0.0
    for xi in np.atleast_1d(np.asarray(xi_grid, dtype=float)):
        A = assemble_fiber(xi, trunc).entries
        E = sla.expm(-t[:, None, None] * A[None])
        integral = np.tensordot(wt, E, axes=1)
        B = np.linalg.matrix_power(A + np.eye(N), k + 1) @ integral
        worst = max(worst, np.linalg.norm(B, 2))
    return float(worst)


def semigroup_power_norms(t: float, k: int, xi_values, trunc: HermiteTruncation) -> np.ndarray:
    """||(P0(xi) + 1)^k exp(-t P0(xi))|| for each xi."""
    t = _check_time(t)
    N = trunc.N
    out = []
    for xi in np.atleast_1d(np.asarray(xi_values, dtype=float)):
        A = assemble_fiber(xi, trunc).entries
        out.append(np.linalg.norm(np.linalg.matrix_power(A + np.eye(N), k) @ sla.expm(-t * A), 2))
    return np.asarray(out)


# -- Projection sums -------------------------------------------------------------

def projection_sum_rhs(t: float, xi: float, n: int = 1) -> float:
    """exp(-|xi|^2 (t - 2 - 4/(e^t - 1))) / (1 - e^{-t})^n."""
    x2 = float(np.sum(np.square(xi)))
    return float(np.exp(-x2 * (t - 2.0 - 4.0 / np.expm1(t))) / (-np.expm1(-t)) ** n)


@dataclass(frozen=True)
class ProjectionSum:
    t: float
    xi: float
    L: int
    lhs: float
    rhs: float
    truncation_error: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def __iter__(self):
        return iter((self.lhs, self.rhs))


PROJECTION_CSV_HEADER = ["t", "xi", "lhs", "rhs", "slack"]


def projection_sum_bound(t: float, xi: float, L: int, trunc: HermiteTruncation,
                         certify: bool = True) -> ProjectionSum:
    """Truncated sum_{l <= L} exp(-t(l + xi^2)) ||Pi_l^xi|| against its closed-form bound.

    ``truncation_error`` is the largest relative change of ||Pi_l^xi|| under
    N -> N + 8 when ``certify`` is set.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if L > trunc.N // 2:
        raise ValueError(f"L={L} exceeds N/2={trunc.N // 2}")
    bigger = HermiteTruncation(trunc.N + 8, trunc.quad_factor)
    lhs = 0.0
    err = 0.0
    for l in range(L + 1):
        p = np.linalg.norm(riesz_projection(l, xi, trunc, tol=np.inf).entries, 2)
        if certify and xi != 0:
            q = np.linalg.norm(riesz_projection(l, xi, bigger, tol=np.inf).entries, 2)
            err = max(err, abs(p - q) / q)
        lhs += np.exp(-t * (l + xi * xi)) * p
    return ProjectionSum(float(t), float(xi), int(L), float(lhs), projection_sum_rhs(t, xi), err)
