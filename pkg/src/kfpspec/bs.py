"""Birman-Schwinger operator K(lam +- i0) = R0(lam +- i0) W on weighted spaces.

All matrices live in the similarity class

    K_s = <x>^{-s} K <x>^{s} = G0 W_s,   G0 = <x>^{-s} R0 <x>^{-s},   W_s = <x>^{s} W <x>^{s},

so singular values are measured in L^2_{-s}, the space where the null vectors
of 1 + K are sought.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .fiber import CutoffSpec
from .fullop import GridSpec, PotentialSpec, japanese
from .hermite import HermiteTruncation, derivative_matrix
from .resolvent import BoundaryValueRequest, FreeResolvent, ThresholdError

__all__ = [
    "CLASSIFICATIONS",
    "NearSingularError",
    "ScanResult",
    "ScanOutcome",
    "BSOperator",
    "weighted_potential",
    "bs_operator",
    "smallest_singular",
    "resonance_scan",
    "classify",
    "perturbed_resolvent_boundary",
    "second_resolvent_residual",
    "characteristic_values",
    "find_crossing",
    "scan_csv",
]

CLASSIFICATIONS = ("regular", "outgoing_resonance", "incoming_resonance", "embedded_candidate", "threshold_excluded")


class NearSingularError(ArithmeticError):
    """1 + K is numerically singular; the energy should be reclassified."""


def _sign_char(sign: int) -> str:
    return "+" if sign > 0 else "-"


def in_threshold_window(lam: float, radius: float) -> bool:
    return lam <= radius or abs(lam - round(lam)) < radius


@dataclass
class ScanResult:
    lam: float
    sign: int
    sigma_min: float
    classification: str
    null_vector: np.ndarray | None = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)
    refinement_level: int = 0

    def __post_init__(self):
        if self.classification not in CLASSIFICATIONS:
            raise ValueError(f"unknown classification {self.classification!r}")

    def csv_row(self) -> list[str]:
        return [f"{self.lam:.10f}", _sign_char(self.sign), f"{self.sigma_min:.12e}",
                self.classification, str(self.refinement_level)]


SCAN_CSV_HEADER = ["lambda", "sign", "sigma_min", "classification", "refinement_level"]


def scan_csv(results: list[ScanResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCAN_CSV_HEADER)
    for r in results:
        w.writerow(r.csv_row())
    return buf.getvalue()


@dataclass
class ScanOutcome:
    points: list[ScanResult]
    detections: list[ScanResult]
    max_k_norm: float
    neumann_bound: float

    @property
    def min_sigma(self) -> float:
        vals = [p.sigma_min for p in self.points if p.classification != "threshold_excluded"]
        return min(vals) if vals else math.nan


def weighted_potential(pot: PotentialSpec, grid: GridSpec, trunc: HermiteTruncation, s: float) -> sp.csr_matrix:
    """W_s = <x>^{2s} (-V'(x)) d/dv as a sparse block-diagonal matrix."""
    w = japanese(grid.x) ** (2.0 * s) * (-pot.dV(grid.x))
    return sp.kron(sp.diags(w), sp.csr_matrix(derivative_matrix(trunc.N))).astype(complex).tocsr()


@dataclass
class BSOperator:
    lam: float
    sign: int
    s: float
    K: np.ndarray
    G0: np.ndarray
    Ws: sp.csr_matrix
    grid: GridSpec
    trunc: HermiteTruncation

    @property
    def one_plus(self) -> np.ndarray:
        return np.eye(self.K.shape[0]) + self.K

    def norm(self) -> float:
        return float(np.linalg.norm(self.K, 2))

    def sigma_min(self, vectors: bool = False):
        return smallest_singular(self.one_plus, vectors=vectors)


def bs_operator(lam: float, sign, s: float, pot: PotentialSpec, grid: GridSpec, trunc: HermiteTruncation,
                cutoff: CutoffSpec | None = None, fiber_trunc: HermiteTruncation | None = None,
                exclusion_radius: float = 0.05) -> BSOperator:
    req = BoundaryValueRequest(lam, sign, s, cutoff, rho=pot.rho, exclusion_radius=exclusion_radius)
    pot.verify(grid.x, long_range=True)
    R = FreeResolvent(req.lam, grid, trunc, req.cutoff, req.sign, fiber_trunc)
    G0 = R.matrix(s)
    Ws = weighted_potential(pot, grid, trunc, s)
    K = np.asarray(G0 @ Ws)
    return BSOperator(float(lam), req.sign, float(s), K, G0, Ws, grid, trunc)


def smallest_singular(A: np.ndarray, vectors: bool = False, dense_limit: int = 2500):
    """Smallest singular value of a square matrix (and its right/left singular vectors).

    Full SVD up to ``dense_limit``; above it, Lanczos on (A^H A)^{-1} through one LU.
    """
    n = A.shape[0]
    if n <= dense_limit:
        if not vectors:
            return float(sla.svdvals(A)[-1])
        U, S, Vh = sla.svd(A)
        return float(S[-1]), Vh[-1].conj(), U[:, -1]
    lu = sla.lu_factor(A)

    def mv(x):
        y = sla.lu_solve(lu, x, trans=2)
        return sla.lu_solve(lu, y)

    op = spla.LinearOperator((n, n), matvec=mv, dtype=complex)
    v0 = np.ones(n, dtype=complex) / math.sqrt(n)
    vals, vecs = spla.eigsh(op, k=1, which="LA", v0=v0, tol=1e-10)
    v = vecs[:, 0]
    Av = A @ v
    sigma = float(np.linalg.norm(Av))
    if not vectors:
        return sigma
    return sigma, v, Av / max(sigma, 1e-300)


# -- scanning ----------------------------------------------------------------

_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_min(f, a: float, b: float, tol: float, stop_below: float = 0.0, max_iter: int = 80):
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc, fd = f(c), f(d)
    history = [(c, fc), (d, fd)]
    for _ in range(max_iter):
        if b - a < tol or min(fc, fd) < stop_below:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = f(c)
            history.append((c, fc))
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = f(d)
            history.append((d, fd))
    lam, val = min(history, key=lambda t: t[1])
    return lam, val, history


def _refined(grid: GridSpec, trunc: HermiteTruncation) -> tuple[GridSpec, HermiteTruncation]:
    return grid.refined(2), HermiteTruncation(trunc.N + 8, trunc.quad_factor)


def resonance_scan(interval, steps: int, sign, s: float, pot: PotentialSpec, grid: GridSpec,
                   trunc: HermiteTruncation, exclusion_radius: float = 0.05,
                   detection_threshold: float = 1e-6, candidate_threshold: float = 0.05,
                   refine: bool = True, refine_tol: float = 5e-2, golden_tol: float = 1e-10,
                   fiber_trunc: HermiteTruncation | None = None, progress=None) -> ScanOutcome:
    """sigma_min(1 + K(lam +- i0)) on a uniform lam grid, with golden-section refinement.

    Local minima below ``candidate_threshold`` are minimized by golden section
    inside the neighbouring grid cells; a minimum below ``detection_threshold``
    is a detection.  Each detection is re-checked at (2M, N+8): it survives if
    the refined minimum lies within one grid step and is below ``refine_tol``.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not 0 < lo < hi:
        raise ValueError("interval must lie in (0, inf)")
    sg = 1 if sign in ("+", 1) else -1
    lams = np.linspace(lo, hi, int(steps))
    step = lams[1] - lams[0] if len(lams) > 1 else hi - lo

    def sigma_at(lam, g=grid, t=trunc):
        op = bs_operator(lam, sg, s, pot, g, t, fiber_trunc=fiber_trunc, exclusion_radius=exclusion_radius)
        sv = sla.svdvals(op.one_plus) if op.K.shape[0] <= 2500 else None
        if sv is not None:
            return float(sv[-1]), op.norm()
        return smallest_singular(op.one_plus), op.norm()

    points: list[ScanResult] = []
    knorm = 0.0
    for lam in lams:
        if in_threshold_window(lam, exclusion_radius):
            points.append(ScanResult(float(lam), sg, math.nan, "threshold_excluded"))
            continue
        smin, kn = sigma_at(lam)
        knorm = max(knorm, kn)
        points.append(ScanResult(float(lam), sg, smin, "regular", diagnostics={"k_norm": kn}))
        if progress:
            progress(lam, smin)

    detections: list[ScanResult] = []
    vals = np.array([p.sigma_min for p in points])
    for i, p in enumerate(points):
        if p.classification == "threshold_excluded" or not p.sigma_min < candidate_threshold:
            continue
        left = vals[i - 1] if i > 0 else np.inf
        right = vals[i + 1] if i + 1 < len(vals) else np.inf
        if not (p.sigma_min <= np.nan_to_num(left, nan=np.inf) and p.sigma_min <= np.nan_to_num(right, nan=np.inf)):
            continue
        a = max(lo, p.lam - step)
        b = min(hi, p.lam + step)
        lam_star, s_star, hist = _golden_min(lambda x: sigma_at(x)[0], a, b, golden_tol,
                                             stop_below=detection_threshold / 10)
        p.diagnostics["golden"] = {"lambda": lam_star, "sigma_min": s_star, "evaluations": len(hist)}
        if s_star >= detection_threshold:
            continue
        hit = ScanResult(float(lam_star), sg, float(s_star), "regular",
                         diagnostics={"grid_point": p.lam, "history": [(float(x), float(y)) for x, y in hist]})
        if refine:
            g2, t2 = _refined(grid, trunc)
            lam_r, s_r, hist_r = _golden_min(lambda x: sigma_at(x, g2, t2)[0],
                                             max(lo, lam_star - step), min(hi, lam_star + step), 1e-6)
            survived = bool(abs(lam_r - lam_star) <= step and s_r <= refine_tol)
            hit.refinement_level = 1
            hit.diagnostics["refined"] = {"M": g2.M, "N": t2.N, "lambda": lam_r, "sigma_min": s_r,
                                          "survived": survived}
            if not survived:
                hit.diagnostics["inconclusive"] = True
        cls = classify(lam_star, s, pot, grid, trunc, exclusion_radius=exclusion_radius,
                       null_tol=max(detection_threshold, 10 * s_star), fiber_trunc=fiber_trunc)
        hit.classification = cls.classification
        hit.null_vector = cls.null_vector
        hit.diagnostics["classify"] = cls.diagnostics
        detections.append(hit)
    return ScanOutcome(points, detections, knorm, 1.0 - knorm)


def classify(lam: float, s: float, pot: PotentialSpec, grid: GridSpec, trunc: HermiteTruncation,
             exclusion_radius: float = 0.05, null_tol: float = 1e-6, match_tol: float = 1e-3,
             fiber_trunc: HermiteTruncation | None = None, growth_windows=None) -> ScanResult:
    """Null-vector analysis of 1 + K(lam + i0) and 1 + K(lam - i0).

    A null vector for one sign only gives an outgoing (+) or incoming (-)
    resonance.  Null vectors for both signs that coincide up to a phase give an
    embedded-eigenvalue candidate; distinct ones are reported as an outgoing
    resonance with the incoming data kept in the diagnostics.
    """
    if in_threshold_window(lam, exclusion_radius):
        return ScanResult(float(lam), 1, math.nan, "threshold_excluded")
    data = {}
    for sg in (1, -1):
        op = bs_operator(lam, sg, s, pot, grid, trunc, fiber_trunc=fiber_trunc, exclusion_radius=exclusion_radius)
        smin, v, _ = op.sigma_min(vectors=True)
        data[sg] = (smin, v, op.norm())
    has = {sg: data[sg][0] < null_tol for sg in (1, -1)}
    diag = {"sigma_plus": data[1][0], "sigma_minus": data[-1][0],
            "k_norm_plus": data[1][2], "k_norm_minus": data[-1][2]}
    w = np.repeat(japanese(grid.x) ** s, trunc.N)

    def unweight(v):
        return (w * v).reshape(grid.M, trunc.N)

    if has[1] and has[-1]:
        vp, vm = data[1][1], data[-1][1]
        overlap = abs(np.vdot(vp, vm)) / (np.linalg.norm(vp) * np.linalg.norm(vm))
        diag["principal_angle_gap"] = float(1.0 - overlap)
        if 1.0 - overlap < match_tol:
            u = unweight(vp)
            if growth_windows:
                diag["norm_ratio_growth"] = _norm_ratio_growth(lam, s, pot, grid, trunc, growth_windows, fiber_trunc)
            return ScanResult(float(lam), 1, data[1][0], "embedded_candidate", u, diag)
        diag["incoming_also"] = True
        return ScanResult(float(lam), 1, data[1][0], "outgoing_resonance", unweight(vp), diag)
    if has[1]:
        return ScanResult(float(lam), 1, data[1][0], "outgoing_resonance", unweight(data[1][1]), diag)
    if has[-1]:
        return ScanResult(float(lam), -1, data[-1][0], "incoming_resonance", unweight(data[-1][1]), diag)
    return ScanResult(float(lam), 1, min(data[1][0], data[-1][0]), "regular", None, diag)


def _norm_ratio_growth(lam, s, pot, grid, trunc, windows, fiber_trunc):
    # ||u|| / ||<x>^{-s} u|| for the + null vector on growing windows of equal spacing
    out = []
    for L in windows:
        g = GridSpec.symmetric(L, int(round(2 * L / grid.h)))
        op = bs_operator(lam, 1, s, pot, g, trunc, fiber_trunc=fiber_trunc)
        _, v, _ = op.sigma_min(vectors=True)
        u = np.repeat(japanese(g.x) ** s, trunc.N) * v
        out.append(float(np.linalg.norm(u) / np.linalg.norm(v)))
    return out


# -- perturbed boundary values ------------------------------------------------

def perturbed_resolvent_boundary(lam: float, sign, s: float, pot: PotentialSpec, grid: GridSpec,
                                 trunc: HermiteTruncation, singular_tol: float = 1e-6,
                                 fiber_trunc: HermiteTruncation | None = None,
                                 return_parts: bool = False):
    """<x>^{-s} R(lam +- i0) <x>^{-s} = (1 + K_s)^{-1} G0."""
    op = bs_operator(lam, sign, s, pot, grid, trunc, fiber_trunc=fiber_trunc)
    A = op.one_plus
    smin = smallest_singular(A)
    if smin < singular_tol:
        raise NearSingularError(f"sigma_min(1+K) = {smin:.2e} at lambda={lam}: reclassify this energy")
    G = np.linalg.solve(A, op.G0)
    if return_parts:
        return G, op
    return G


def second_resolvent_residual(G: np.ndarray, op: BSOperator) -> float:
    """||G - G0 + G0 W_s G|| in the weighted operator norm."""
    return float(np.linalg.norm(G - op.G0 + np.asarray(op.G0 @ (op.Ws @ G)), 2))


# -- eigenvalue continuation -----------------------------------------------------

def characteristic_values(lam: float, sign, s: float, shape: PotentialSpec, grid: GridSpec,
                          trunc: HermiteTruncation, count: int = 12, min_modulus: float = 0.02,
                          fiber_trunc: HermiteTruncation | None = None) -> np.ndarray:
    """Largest eigenvalues of K(lam +- i0) for the unit-coupling potential ``shape``."""
    op = bs_operator(lam, sign, s, shape, grid, trunc, fiber_trunc=fiber_trunc)
    ev = np.linalg.eigvals(op.K)
    ev = ev[np.abs(ev) > min_modulus]
    return ev[np.argsort(-np.abs(ev))][:count]


def find_crossing(interval, steps: int, sign, s: float, shape: PotentialSpec, grid: GridSpec,
                  trunc: HermiteTruncation, fiber_trunc: HermiteTruncation | None = None,
                  count: int = 8, im_floor: float = 1e-2, xtol: float = 1e-10):
    """Smallest coupling g* > 0 with -1 an eigenvalue of g* K_1(lam* +- i0), lam* in ``interval``.

    The ``count`` dominant eigenvalues mu(lam) of the unit-coupling operator
    are followed across a lam grid by nearest matching.  A transversal
    crossing is a branch with Re mu < 0 whose imaginary part changes sign
    while staying above ``im_floor * |mu|`` at both grid points; this rejects
    near-real branches whose imaginary part is rounding noise.  The crossing
    with the largest |Re mu|, the first one met as g grows from 0, is solved
    for Im mu = 0 by Brent's method and g* = -1 / Re mu(lam*).

    Returns a dict with lambda, mu, g, im_slope and bracket, or None.
    """
    lams = np.linspace(float(interval[0]), float(interval[1]), int(steps))
    candidates = []
    prev = None
    for lam in lams:
        if in_threshold_window(lam, 0.05):
            prev = None
            continue
        ev = characteristic_values(lam, sign, s, shape, grid, trunc, count=count, min_modulus=0.0,
                                   fiber_trunc=fiber_trunc)
        if prev is not None:
            for mu in ev:
                p = prev[1][int(np.argmin(np.abs(prev[1] - mu)))]
                if (abs(p - mu) < 0.25 * abs(mu) and p.imag * mu.imag < 0 and max(p.real, mu.real) < 0
                        and min(abs(p.imag), abs(mu.imag)) > im_floor * abs(mu)):
                    candidates.append((prev[0], float(lam), complex(p), complex(mu)))
        prev = (float(lam), ev)
    if not candidates:
        return None
    a, b, mu_a, mu_b = max(candidates, key=lambda c: -min(c[2].real, c[3].real))
    out = _solve_crossing(a, b, mu_a, mu_b, sign, s, shape, grid, trunc, fiber_trunc, xtol)
    out["im_slope"] = float((mu_b.imag - mu_a.imag) / (b - a))
    out["bracket"] = (a, b)
    return out


def _solve_crossing(a, b, mu_a, mu_b, sign, s, shape, grid, trunc, fiber_trunc, xtol):
    def branch(lam):
        # eigenvalue nearest the chord between the endpoint values
        guess = mu_a + (mu_b - mu_a) * (lam - a) / (b - a)
        ev = np.linalg.eigvals(bs_operator(lam, sign, s, shape, grid, trunc, fiber_trunc=fiber_trunc).K)
        return complex(ev[int(np.argmin(np.abs(ev - guess)))])

    lam_star = brentq(lambda lam: branch(lam).imag, a, b, xtol=xtol)
    mu = branch(lam_star)
    return {"lambda": float(lam_star), "mu": mu, "g": float(-1.0 / mu.real)}
