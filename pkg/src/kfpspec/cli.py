"""Command-line harness: ``kfpspec <command> --config run.yaml --out DIR``.

Every run writes CSV tables, gnuplot-ready ``.dat`` files and ``summary.json``
(inputs, versions, timings, diagnostics).  Failures write ``error.json``.
Exit status: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

SCHEMA_VERSION = "1.0"
COMMANDS = (
    "fiber-spectrum",
    "free-lap",
    "resonance-scan",
    "classify",
    "perturbed-lap",
    "decay-report",
    "semigroup-check",
    "smoothing-check",
)

log = logging.getLogger("kfpspec")


class ConfigError(ValueError):
    """Invalid or unknown configuration entries."""


# -- configuration ------------------------------------------------------------------

@dataclass
class GridConfig:
    x_min: float = -24.0
    x_max: float = 24.0
    M: int = 96


@dataclass
class PotentialConfig:
    family: str = "power_law"
    g: float = 0.05
    rho: float = 1.0
    file: str | None = None
    C: float | None = None


@dataclass
class WeightsConfig:
    s: float = 0.6


@dataclass
class CutoffConfig:
    l: int | None = None
    a: float | None = None
    plateau: float | None = None
    support: float | None = None


@dataclass
class ScanConfig:
    lambda_min: float = 0.2
    lambda_max: float = 0.8
    steps: int = 13
    exclusion_radius: float = 0.05
    detection_threshold: float = 1e-6
    candidate_threshold: float = 0.05
    sign: str = "+"
    refine: bool = True


@dataclass
class ToleranceConfig:
    fiber_eigenvalue: float = 1e-8
    projection: float = 1e-8
    lap_cauchy: float = 1e-3
    lap_paths: float = 1e-4
    threshold_growth: float = 3.0
    second_resolvent: float = 1e-6
    continuity: float = 0.10
    commutation: float = 1e-6
    projection_sum: float = 1e-10
    refine: float = 5e-2
    singular: float = 1e-6


@dataclass
class CacheConfig:
    enabled: bool = False
    dir: str = ".kfpspec-cache"


@dataclass
class FiberConfig:
    N: int = 64
    xi: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0])


@dataclass
class LapConfig:
    lam: float = 0.5
    sign: str = "+"


@dataclass
class PerturbedConfig:
    lambdas: list = field(default_factory=lambda: [0.3, 0.5, 0.7])
    sign: str = "+"


@dataclass
class DecayConfig:
    z_re: float = -1.0
    z_im: float = 0.0
    c0: float = 0.05
    r: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    moments: list = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0])


@dataclass
class SemigroupConfig:
    N: int = 64
    M: int = 256
    L: float = 32.0
    t_values: list = field(default_factory=lambda: [0.5, 1.0, 2.0, 3.0])
    s_fractions: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0])
    states: int = 3
    sum_t: list = field(default_factory=lambda: [0.5, 1.0, 2.0, 3.0, 5.0, 10.0])
    sum_xi: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0])
    sum_N: int = 64


@dataclass
class SmoothingConfig:
    k: int = 1
    T: float = 4.0
    N: int = 32
    xi: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 3.0])


@dataclass
class RunConfig:
    dimension: int = 1
    hermite_N: int = 12
    seed: int = 0
    grid: GridConfig = field(default_factory=GridConfig)
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    weights: WeightsConfig = field(default_factory=WeightsConfig)
    cutoff: CutoffConfig = field(default_factory=CutoffConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    eps_sequence: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6])
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    output_dir: str = "kfpspec-out"
    cache: CacheConfig = field(default_factory=CacheConfig)
    fiber: FiberConfig = field(default_factory=FiberConfig)
    lap: LapConfig = field(default_factory=LapConfig)
    perturbed: PerturbedConfig = field(default_factory=PerturbedConfig)
    decay: DecayConfig = field(default_factory=DecayConfig)
    semigroup: SemigroupConfig = field(default_factory=SemigroupConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)

    def validate(self) -> None:
        if self.dimension != 1:
            raise ConfigError("only dimension 1 is implemented")
        if self.hermite_N < 2:
            raise ConfigError("hermite_N must be >= 2")
        if not self.grid.x_min < self.grid.x_max or self.grid.M < 4:
            raise ConfigError("grid needs x_min < x_max and M >= 4")
        if self.potential.family == "sampled" and not self.potential.file:
            raise ConfigError("sampled potential needs potential.file")
        if self.scan.sign not in ("+", "-") or self.lap.sign not in ("+", "-") or self.perturbed.sign not in ("+", "-"):
            raise ConfigError("signs must be '+' or '-'")
        if not 0 < self.scan.lambda_min < self.scan.lambda_max or self.scan.steps < 2:
            raise ConfigError("scan needs 0 < lambda_min < lambda_max and steps >= 2")
        eps = self.eps_sequence
        if len(eps) < 2 or any(b >= a for a, b in zip(eps, eps[1:])) or eps[-1] <= 0:
            raise ConfigError("eps_sequence must be positive and strictly decreasing")
        if not 0.5 < self.weights.s < 0.5 * (1.0 + self.potential.rho):
            raise ConfigError(f"weights.s must lie in (1/2, (1+rho)/2) = (0.5, {0.5 * (1 + self.potential.rho)})")
        if self.decay.c0 < 0 or any(r < 1 for r in self.decay.r):
            raise ConfigError("decay needs c0 >= 0 and r >= 1")
        if self.smoothing.T <= 3:
            raise ConfigError("smoothing.T must exceed 3")
        # build the numerical objects once so their own checks run at load time
        self.grid_spec()
        self.potential_spec()
        self.cutoff_spec(self.lap.lam)

    # -- numerical objects --

    def grid_spec(self):
        from .fullop import GridSpec
        return GridSpec(float(self.grid.x_min), float(self.grid.x_max), int(self.grid.M))

    def trunc(self, N: int | None = None):
        from .hermite import HermiteTruncation
        return HermiteTruncation(int(N or self.hermite_N))

    def potential_spec(self, g: float | None = None):
        from .fullop import PotentialSpec, load_sampled_potential
        p = self.potential
        g = p.g if g is None else g
        if p.family == "sampled":
            return load_sampled_potential(p.file, p.rho, g, p.C)
        return PotentialSpec(p.family, g=float(g), rho=float(p.rho), C=p.C)

    def cutoff_spec(self, lam: float):
        from .fiber import CutoffSpec
        c = self.cutoff
        if c.l is None and c.a is None:
            return CutoffSpec.for_energy(lam) if abs(lam - round(lam)) > 1e-9 else None
        base = CutoffSpec.for_energy(lam)
        kw = {"l": base.l if c.l is None else int(c.l), "a": base.a if c.a is None else float(c.a)}
        if c.plateau is not None:
            kw["plateau"] = float(c.plateau)
        if c.support is not None:
            kw["support"] = float(c.support)
        return CutoffSpec(**kw)


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        default = names[key].default_factory() if names[key].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{where}.{key}" if where else key)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def load_config(path: str | None) -> RunConfig:
    data = {}
    if path:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = _build(RunConfig, data, "")
    cfg.validate()
    return cfg


# -- output helpers ----------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, complex):
        return f"{x.real!r}{x.imag:+}j"
    return str(x)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


class Output:
    """Serialized writer for one run directory."""

    def __init__(self, root: Path):
        self.root = root
        root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def table(self, name: str, header, rows) -> None:
        rows = list(rows)
        (self.root / f"{name}.csv").write_text(_csv_text(header, rows))
        numeric = [r for r in rows if all(isinstance(v, (int, float)) for v in r)]
        if numeric:
            lines = ["# " + " ".join(header)] + [" ".join(_fmt(float(v)) for v in r) for r in numeric]
            (self.root / f"{name}.dat").write_text("\n".join(lines) + "\n")
        self.files.append(f"{name}.csv")

    def text(self, name: str, content: str) -> None:
        (self.root / name).write_text(content)
        self.files.append(name)

    def json(self, name: str, payload: dict) -> None:
        (self.root / name).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    import numpy as np

    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist()) if x.dtype.kind == "c" else x.tolist()
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    if isinstance(x, list):
        return [_jsonable(v) if isinstance(v, complex) else v for v in x]
    raise TypeError(f"not serializable: {type(x)}")


class FiberCache:
    """Disk cache of fiber eigenvalues keyed by (xi, N, quadrature); exact round trip via .npy."""

    def __init__(self, directory: str | None):
        self.dir = Path(directory) if directory else None
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def eigenvalues(self, xi: float, N: int):
        import numpy as np

        from .fiber import fiber_eigenvalues

        if self.dir is None:
            return fiber_eigenvalues(xi, self._trunc(N))
        key = hashlib.sha256(f"eig|{float(xi)!r}|{int(N)}|4".encode()).hexdigest()[:24]
        path = self.dir / f"{key}.npy"
        if path.exists():
            return np.load(path)
        ev = fiber_eigenvalues(xi, self._trunc(N))
        tmp = path.with_suffix(".tmp.npy")
        np.save(tmp, ev)
        os.replace(tmp, path)
        return ev

    @staticmethod
    def _trunc(N):
        from .hermite import HermiteTruncation
        return HermiteTruncation(int(N))


# -- commands --------------------------------------------------------------------------------

def cmd_fiber_spectrum(cfg: RunConfig, out: Output) -> dict:
    import numpy as np

    from .fiber import projection_residuals
    from .hermite import HermiteTruncation

    N = cfg.fiber.N
    cache = FiberCache(cfg.cache.dir if cfg.cache.enabled else None)
    rows = []
    worst = 0.0
    for xi in cfg.fiber.xi:
        ev = cache.eigenvalues(float(xi), N)
        for l in range(N // 2 + 1):
            target = l + xi * xi
            lam = complex(ev[np.argmin(np.abs(ev - target))])
            err = abs(lam - target)
            worst = max(worst, err)
            rows.append((float(xi), l, lam.real, lam.imag, err))
    out.table("fiber_spectrum", ["xi", "l", "re", "im", "error"], rows)
    tr = HermiteTruncation(N)
    proj = [(float(xi),) + tuple(projection_residuals(range(0, 9), float(xi), tr).values()) for xi in cfg.fiber.xi]
    out.table("projection_residuals", ["xi", "absolute", "relative"], proj)
    return {"max_eigenvalue_error": worst, "tolerance": cfg.tolerances.fiber_eigenvalue,
            "within_tolerance": worst <= cfg.tolerances.fiber_eigenvalue}


def cmd_free_lap(cfg: RunConfig, out: Output) -> dict:
    import numpy as np

    from .resolvent import LAP_CSV_HEADER, extrapolate_offaxis, free_resolvent_boundary, lap_probe, BoundaryValueRequest

    grid, trunc = cfg.grid_spec(), cfg.trunc()
    lam, s = cfg.lap.lam, cfg.weights.s
    rec = lap_probe(lam, cfg.lap.sign, s, cfg.eps_sequence, trunc, grid, cutoff=cfg.cutoff_spec(lam))
    out.table("lap", LAP_CSV_HEADER, [rec.csv_row()])
    out.table("lap_sequence", ["eps", "norm"], list(zip(rec.eps, rec.norms)))
    summary = {"norms": rec.norms, "differences": rec.differences, "cauchy_rate": rec.cauchy_rate, "flags": rec.flags,
               "final_difference": rec.differences[-1],
               "cauchy_ok": rec.differences[-1] <= cfg.tolerances.lap_cauchy}
    if "threshold" not in rec.flags:
        req = BoundaryValueRequest(lam, cfg.lap.sign, s, cfg.cutoff_spec(lam), rho=cfg.potential.rho)
        G = free_resolvent_boundary(req, trunc, grid)
        E, corr = extrapolate_offaxis(lam, cfg.lap.sign, s, trunc, grid)
        diff = float(np.linalg.norm(G - E, 2))
        summary.update({"path_difference": diff, "extrapolation_correction": corr,
                        "paths_agree": diff <= cfg.tolerances.lap_paths})
    return summary


def cmd_resonance_scan(cfg: RunConfig, out: Output) -> dict:
    from .bs import SCAN_CSV_HEADER, resonance_scan

    sc = cfg.scan
    res = resonance_scan((sc.lambda_min, sc.lambda_max), sc.steps, sc.sign, cfg.weights.s, cfg.potential_spec(),
                         cfg.grid_spec(), cfg.trunc(), exclusion_radius=sc.exclusion_radius,
                         detection_threshold=sc.detection_threshold, candidate_threshold=sc.candidate_threshold,
                         refine=sc.refine, refine_tol=cfg.tolerances.refine,
                         progress=lambda lam, smin: log.info("lambda=%.6f sigma_min=%.3e", lam, smin))
    out.table("scan", SCAN_CSV_HEADER, [p.csv_row() for p in res.points])
    out.table("detections", SCAN_CSV_HEADER, [d.csv_row() for d in res.detections])
    return {
        "detections": [{"lambda": d.lam, "sigma_min": d.sigma_min, "classification": d.classification,
                        "inconclusive": bool(d.diagnostics.get("inconclusive", False))} for d in res.detections],
        "max_k_norm": res.max_k_norm,
        "neumann_bound": res.neumann_bound,
        "min_sigma": res.min_sigma,
    }


def cmd_classify(cfg: RunConfig, out: Output) -> dict:
    from .bs import SCAN_CSV_HEADER, classify

    lam = cfg.lap.lam
    r = classify(lam, cfg.weights.s, cfg.potential_spec(), cfg.grid_spec(), cfg.trunc(),
                 exclusion_radius=cfg.scan.exclusion_radius, null_tol=cfg.scan.detection_threshold)
    out.table("classify", SCAN_CSV_HEADER, [r.csv_row()])
    return {"lambda": lam, "classification": r.classification, "diagnostics": r.diagnostics}


def cmd_perturbed_lap(cfg: RunConfig, out: Output) -> dict:
    import numpy as np

    from .bs import perturbed_resolvent_boundary, second_resolvent_residual

    grid, trunc, pot = cfg.grid_spec(), cfg.trunc(), cfg.potential_spec()
    rows = []
    for lam in cfg.perturbed.lambdas:
        G, op = perturbed_resolvent_boundary(lam, cfg.perturbed.sign, cfg.weights.s, pot, grid, trunc,
                                             singular_tol=cfg.tolerances.singular, return_parts=True)
        rows.append((float(lam), float(np.linalg.norm(G, 2)), second_resolvent_residual(G, op)))
    out.table("perturbed_lap", ["lambda", "norm", "second_resolvent_residual"], rows)
    worst = max(r[2] for r in rows)
    return {"max_residual": worst, "residual_ok": worst <= cfg.tolerances.second_resolvent}


def cmd_decay_report(cfg: RunConfig, out: Output) -> dict:
    from .decay import conjugation_check, decay_fit, exponential_state, tau_norms

    grid, trunc = cfg.grid_spec(), cfg.trunc()
    z = complex(cfg.decay.z_re, cfg.decay.z_im)
    n = tau_norms(z, trunc, grid)
    t = min(1.0 / (n["v_dv_R0"] + n["v_x_R0"] + n["R0"]), n["R0"] ** -0.5)
    rows = [(float(r), conjugation_check(z, cfg.decay.c0, r, trunc, grid, tau_value=t)) for r in cfg.decay.r]
    out.table("conjugation", ["r", "margin"], rows)
    ref = cfg.trunc(max(cfg.hermite_N, 64))
    fit = decay_fit(exponential_state(grid, ref), grid, ref)
    out.table("synthetic_shells", ["phi", "shell_max"], list(zip(fit.shells.tolist(), fit.maxima.tolist())))
    worst = max(m for _, m in rows)
    return {"z": z, "tau": t, "norms": n, "c0": cfg.decay.c0, "max_margin": worst,
            "hypothesis_satisfied": worst < 1.0, "synthetic_rate": fit.c, "synthetic_quality": fit.quality}


def cmd_semigroup_check(cfg: RunConfig, out: Output) -> dict:
    from .fullop import GridSpec, random_smooth_states
    from .semigroup import COMMUTATION_CSV_HEADER, PROJECTION_CSV_HEADER, EvolutionPlan, commutation_table, projection_sum_bound

    sg = cfg.semigroup
    plan = EvolutionPlan(GridSpec.symmetric(sg.L, sg.M), cfg.trunc(sg.N))
    pairs = [(float(t), float(f) * float(t)) for t in sg.t_values for f in sg.s_fractions]
    table = commutation_table(pairs, plan, random_smooth_states(sg.states, seed=cfg.seed))
    out.table("commutation", COMMUTATION_CSV_HEADER, table)
    rows = []
    for t in sg.sum_t:
        for xi in sg.sum_xi:
            N = sg.sum_N
            L = N // 2
            r = projection_sum_bound(float(t), float(xi), L, cfg.trunc(N))
            rows.append((float(t), float(xi), r.lhs, r.rhs, r.slack))
    out.table("projection_sum", PROJECTION_CSV_HEADER, rows)
    worst = max(r[3] for r in table)
    violated = [r for r in rows if r[2] > r[3] * (1 + 1e-12)]
    return {"max_commutation_residual": worst, "commutation_ok": worst <= cfg.tolerances.commutation,
            "projection_sum_violations": len(violated)}


def cmd_smoothing_check(cfg: RunConfig, out: Output) -> dict:
    from .semigroup import smoothing_integral

    sm = cfg.smoothing
    trunc = cfg.trunc(sm.N)
    k = sm.k
    rows = [
        ("t^(k+1)", k, smoothing_integral(lambda t: t ** (k + 1), k, sm.T, trunc, sm.xi, vanishing_order=k + 1)),
        ("1", 0, smoothing_integral(lambda t: 1.0, 0, sm.T, trunc, sm.xi, vanishing_order=0)),
        ("t", 1, smoothing_integral(lambda t: t, 1, sm.T, trunc, sm.xi, vanishing_order=1, strict=False)),
    ]
    out.table("smoothing", ["theta", "k", "bound"], rows)
    return {"bounds": {f"{name}|k={kk}": b for name, kk, b in rows}, "exploratory": ["t|k=1"]}


HANDLERS = {
    "fiber-spectrum": cmd_fiber_spectrum,
    "free-lap": cmd_free_lap,
    "resonance-scan": cmd_resonance_scan,
    "classify": cmd_classify,
    "perturbed-lap": cmd_perturbed_lap,
    "decay-report": cmd_decay_report,
    "semigroup-check": cmd_semigroup_check,
    "smoothing-check": cmd_smoothing_check,
}


# -- entry point ------------------------------------------------------------------------------

def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {"kfpspec": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _classify_error(exc: BaseException) -> int:
    from .fullop import Ass1Error
    from .resolvent import AdmissibilityError, ThresholdError

    if isinstance(exc, (ConfigError, Ass1Error, ThresholdError, AdmissibilityError)):
        return 1
    if isinstance(exc, (ArithmeticError, RuntimeError)) or type(exc).__name__ == "LinAlgError":
        return 2
    if isinstance(exc, (ValueError, TypeError, OSError)):
        return 1
    return 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kfpspec", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--threads", type=int, default=None, help="BLAS/FFT thread count")
    p.add_argument("--verbose", action="store_true")
    return p


def run(command: str, cfg: RunConfig, out_dir: Path) -> int:
    out = Output(out_dir)
    t0 = time.perf_counter()
    try:
        diagnostics = HANDLERS[command](cfg, out)
    except Exception as exc:  # reported as machine-readable JSON
        code = _classify_error(exc)
        payload = {"schema_version": SCHEMA_VERSION, "command": command, "status": "error", "exit_code": code,
                   "error_type": type(exc).__name__, "message": str(exc)}
        out.json("error.json", payload)
        print(json.dumps(payload, sort_keys=True))
        return code
    summary = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "status": "ok",
        "config": dataclasses.asdict(cfg),
        "versions": _versions(),
        "timings": {"wall_seconds": time.perf_counter() - t0},
        "files": out.files,
        "diagnostics": diagnostics,
    }
    out.json("summary.json", summary)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        cfg = load_config(args.config)
    except Exception as exc:
        code = _classify_error(exc)
        print(json.dumps({"schema_version": SCHEMA_VERSION, "command": args.command, "status": "error",
                          "exit_code": code, "error_type": type(exc).__name__, "message": str(exc)}, sort_keys=True))
        return code
    out_dir = Path(args.out or cfg.output_dir)
    return run(args.command, cfg, out_dir)


if __name__ == "__main__":
    sys.exit(main())
