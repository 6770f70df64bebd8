"""Normalized Hermite functions and their complex-shifted relatives.

The velocity basis is

    phi_j(s) = (j! sqrt(2 pi))^{-1/2} exp(-s^2/4) He_j(s),

with He_j the probabilists' Hermite polynomials.  These are the eigenfunctions
of the harmonic oscillator -d^2/ds^2 + s^2/4 - 1/2 with eigenvalue j.  The
shifted states psi_a^xi(v) = psi_a(v + 2 i xi) are eigenfunctions of the
fiber operator; their coefficients in the real basis are computed here.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import roots_hermitenorm

__all__ = [
    "MultiIndex",
    "HermiteTruncation",
    "HermiteOverflowError",
    "TruncationWarning",
    "hermite_eval",
    "hermite_functions",
    "hermite_function_derivatives",
    "shifted_state",
    "shifted_state_1d",
    "position_matrix",
    "derivative_matrix",
    "number_matrix",
    "pairing",
]

# exp(-s^2/4) has modulus exp((Im s)^2 / 4); keep well inside double range.
MAX_IMAG_SHIFT = 40.0
_GAUSS_NORM = (2.0 * np.pi) ** -0.25


class HermiteOverflowError(OverflowError):
    """Raised when a complex argument would overflow the Gaussian factor."""


class TruncationWarning(UserWarning):
    """Emitted when a coefficient vector has significant weight in its tail."""


@dataclass(frozen=True)
class MultiIndex:
    """Multi-index alpha in N^n."""

    entries: tuple[int, ...]

    def __post_init__(self):
        entries = tuple(int(a) for a in self.entries)
        if any(a < 0 for a in entries):
            raise ValueError(f"multi-index entries must be non-negative: {entries}")
        object.__setattr__(self, "entries", entries)

    @property
    def order(self) -> int:
        return sum(self.entries)

    @property
    def dim(self) -> int:
        return len(self.entries)

    @classmethod
    def of_order(cls, order: int, dim: int = 1) -> list["MultiIndex"]:
        """All multi-indices of dimension ``dim`` with |alpha| = order."""
        if dim == 1:
            return [cls((order,))]
        out = []
        for head in itertools.product(range(order + 1), repeat=dim - 1):
            rest = order - sum(head)
            if rest >= 0:
                out.append(cls(tuple(head) + (rest,)))
        return out


@dataclass(frozen=True)
class HermiteTruncation:
    """Basis size N per velocity dimension plus a Gauss rule for exp(-s^2/2).

    The rule has ``quad_factor * N`` nodes (4N by default), which integrates
    phi_j * phi_k * m(s) exactly for polynomial m of degree < 6N and to
    round-off for the entire, slowly varying factors met in practice.
    """

    N: int
    quad_factor: int = 4
    dim: int = 1
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be positive")
        nodes, weights = roots_hermitenorm(self.quad_factor * self.N)
        order = np.argsort(nodes)
        object.__setattr__(self, "nodes", nodes[order])
        object.__setattr__(self, "weights", weights[order])

    @property
    def size(self) -> int:
        return self.N**self.dim

    @cached_property
    def _poly_at_nodes(self) -> np.ndarray:
        # (N, Q) normalized polynomial parts h_j = He_j / sqrt(j!)
        return _normalized_polys(self.N, self.nodes)

    def multiplication_matrix(self, m) -> np.ndarray:
        """Matrix <phi_i, m(v) phi_j> for a function ``m`` (callable or values)."""
        vals = m(self.nodes) if callable(m) else np.asarray(m)
        h = self._poly_at_nodes
        w = self.weights * vals / np.sqrt(2.0 * np.pi)
        return (h * w) @ h.T

    def operator_matrix(self, m, deriv: bool = False) -> np.ndarray:
        """Matrix <phi_i, m(v) T phi_j> with T the identity or d/dv."""
        vals = m(self.nodes) if callable(m) else np.asarray(m)
        h = self._poly_at_nodes
        if deriv:
            # phi_j' = (sqrt(j) phi_{j-1} - sqrt(j+1) phi_{j+1}) / 2, in h units
            right = _derivative_polys(self.N, self.nodes)
        else:
            right = h
        w = self.weights * vals / np.sqrt(2.0 * np.pi)
        return (h * w) @ right.T

    def synthesize(self, coeffs: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Evaluate sum_j coeffs[..., j] phi_j(v) on a set of points."""
        phi = hermite_functions(self.N, v)
        return np.asarray(coeffs) @ phi


def _check_shift(s) -> None:
    im = np.max(np.abs(np.imag(s))) if np.size(s) else 0.0
    if im > MAX_IMAG_SHIFT:
        raise HermiteOverflowError(
            f"|Im s| = {im:.3g} exceeds {MAX_IMAG_SHIFT}; exp(-s^2/4) would overflow"
        )


def _normalized_polys(N: int, s) -> np.ndarray:
    s = np.asarray(s)
    h = np.empty((N,) + s.shape, dtype=np.result_type(s, float))
    h[0] = 1.0
    if N > 1:
        h[1] = s
    for k in range(1, N - 1):
        h[k + 1] = (s * h[k] - math.sqrt(k) * h[k - 1]) / math.sqrt(k + 1)
    return h


def _derivative_polys(N: int, s) -> np.ndarray:
    # polynomial part of phi_j', built from one extra level of the recurrence
    h = _normalized_polys(N + 1, s)
    d = np.zeros_like(h[:N])
    for j in range(N):
        d[j] = -math.sqrt(j + 1) * h[j + 1]
        if j > 0:
            d[j] += math.sqrt(j) * h[j - 1]
    return 0.5 * d


def hermite_eval(j: int, s):
    """phi_j(s), valid for complex s with |Im s| <= MAX_IMAG_SHIFT."""
    if j < 0:
        raise ValueError("j must be non-negative")
    _check_shift(s)
    h = _normalized_polys(j + 1, s)[j]
    return _GAUSS_NORM * np.exp(-np.asarray(s) ** 2 / 4.0) * h


def hermite_functions(N: int, s) -> np.ndarray:
    """Array of shape (N, *s.shape) holding phi_0..phi_{N-1} at s."""
    _check_shift(s)
    h = _normalized_polys(N, s)
    return _GAUSS_NORM * np.exp(-np.asarray(s) ** 2 / 4.0) * h


def hermite_function_derivatives(N: int, s) -> np.ndarray:
    _check_shift(s)
    return _GAUSS_NORM * np.exp(-np.asarray(s) ** 2 / 4.0) * _derivative_polys(N, s)


def shifted_state_1d(j: int, xi: float, trunc: HermiteTruncation, warn_tol: float = 1e-10):
    """Coefficients of phi_j(v + 2 i xi) in the basis phi_0..phi_{N-1}.

    Since the basis is real and orthonormal, c_k = int phi_k(v) phi_j(v + 2 i xi) dv,
    evaluated with the Gauss rule after factoring out exp(-v^2/2).
    """
    if j >= trunc.N:
        raise ValueError(f"index {j} outside truncation N={trunc.N}")
    v = trunc.nodes
    shift = 2j * xi
    _check_shift(shift)
    hk = trunc._poly_at_nodes
    hj = _normalized_polys(j + 1, v + shift)[j]
    # phi_k(v) phi_j(v+2i xi) = (2 pi)^{-1/2} h_k h_j exp(-v^2/2) exp(-i xi v + xi^2)
    g = hj * np.exp(-1j * xi * v + xi**2) / np.sqrt(2.0 * np.pi)
    c = hk @ (trunc.weights * g)
    _tail_check(c, warn_tol)
    return c


def _tail_check(c: np.ndarray, tol: float) -> None:
    n = c.shape[0]
    tail = c[n - max(1, n // 10):]
    total = np.linalg.norm(c)
    if total > 0 and np.linalg.norm(tail) > tol * total:
        warnings.warn(
            f"shifted state has tail fraction {np.linalg.norm(tail) / total:.2e} > {tol:.0e}",
            TruncationWarning,
            stacklevel=3,
        )


def shifted_state(alpha: MultiIndex, xi, trunc: HermiteTruncation, warn_tol: float = 1e-10):
    """Coefficient vector of psi_alpha^xi in the tensor basis {psi_beta}.

    For n > 1 the result is the flattened tensor product of the 1-d vectors
    (C order, last velocity component fastest).
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if alpha.dim != xi.size:
        raise ValueError("alpha and xi dimensions differ")
    if alpha.order >= trunc.N:
        raise ValueError("|alpha| must be < N")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        factors = [shifted_state_1d(a, x, trunc, warn_tol=np.inf) for a, x in zip(alpha.entries, xi)]
    c = factors[0]
    for f in factors[1:]:
        c = np.multiply.outer(c, f).ravel()
    _tail_check(factors[0] if len(factors) == 1 else c, warn_tol)
    return c


def pairing(f: np.ndarray, g: np.ndarray) -> complex:
    """Bilinear pairing int f g dv of two coefficient vectors (no conjugation)."""
    return complex(np.sum(np.asarray(f) * np.asarray(g)))


def position_matrix(N: int) -> np.ndarray:
    """Compression of multiplication by v: v phi_j = sqrt(j+1) phi_{j+1} + sqrt(j) phi_{j-1}."""
    off = np.sqrt(np.arange(1, N, dtype=float))
    return np.diag(off, 1) + np.diag(off, -1)


def derivative_matrix(N: int) -> np.ndarray:
    """Compression of d/dv: phi_j' = (sqrt(j) phi_{j-1} - sqrt(j+1) phi_{j+1}) / 2."""
    off = 0.5 * np.sqrt(np.arange(1, N, dtype=float))
    return np.diag(off, 1) - np.diag(off, -1)


def number_matrix(N: int) -> np.ndarray:
    return np.diag(np.arange(N, dtype=float))
