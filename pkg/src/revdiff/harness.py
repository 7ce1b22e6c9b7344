"""Experiment configuration, the contraction-rate study and run manifests.

A configuration file is TOML with four flat sections::

    [truth]   family = "matern" | "fourier" | "zero", d, s0, amplitude, K, terms
    [prior]   kind = "gaussian" | "pexp", base, s, p, K, J, N
    [sim]     dt, x0, burn_in, T
    [study]   T, replicates, seed, estimator, q, floor, workers, mass_grid, draws

Every random quantity of a study cell is a function of ``(seed, T,
replicate)`` alone, so cells can be recomputed in isolation.
"""

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import tomli

from .basis import BasisDescriptor, CoefficientVector, FourierIndex
from .diffusion import Potential
from .errors import DomainError, NumericalError, RevdiffError, StudyError
from .estimator import error_norms, gradient_grid, plugin_drift, wavelet_density_estimate
from .inference import gaussian_posterior, path_stats, pexp_map, posterior_sample
from .priors import (
    MATERN,
    GaussianPriorSpec,
    PExpPriorSpec,
    level_rule,
    matern_truncation,
)
from .sde import SimConfig, make_rng, simulate

ESTIMATORS = ("posterior_mean", "map", "plugin")
TIMING_KEYS = ("wall_ms", "wall_clock", "started", "finished")
MAX_FAILED_FRACTION = 0.2


# -- configuration ----------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    truth: dict
    prior: dict
    T_grid: tuple = (250.0, 500.0, 1000.0, 2000.0, 4000.0)
    replicates: int = 20
    dt: float = 1e-3
    seed: int = 0
    estimator: str = "posterior_mean"
    q: float = 2.0
    floor: float = 1e-3
    x0: tuple = None
    burn_in: float = 0.0
    sim_T: float = None
    workers: int = 1
    mass_grid: tuple = ()
    draws: int = 1000
    out: str = "out"

    def __post_init__(self):
        Ts = tuple(float(t) for t in self.T_grid)
        object.__setattr__(self, "T_grid", Ts)
        if len(Ts) < 3 or any(b <= a for a, b in zip(Ts, Ts[1:])):
            raise DomainError("the T grid must be strictly increasing with at least 3 entries")
        if self.replicates < 5:
            raise DomainError("at least 5 replicates are required")
        if self.estimator not in ESTIMATORS:
            raise DomainError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.workers < 1:
            raise DomainError("workers must be at least 1")
        d = self.d
        x0 = (0.0,) * d if self.x0 is None else tuple(float(v) for v in np.atleast_1d(self.x0))
        if len(x0) != d:
            raise DomainError(f"x0 has {len(x0)} entries for d={d}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "mass_grid", tuple(float(m) for m in self.mass_grid))
        if self.sim_T is None:
            object.__setattr__(self, "sim_T", Ts[-1])
        if self.mass_grid and not self.prior_is_gaussian:
            raise DomainError("the posterior-mass mode needs a Gaussian prior")

    @property
    def d(self):
        return int(self.truth.get("d", 1))

    @property
    def prior_is_gaussian(self):
        return self.prior.get("kind", "gaussian") == "gaussian"

    def to_json(self):
        out = asdict(self)
        out.pop("workers")
        out.pop("out")
        return out

    def hash(self):
        """SHA-256 of the canonical JSON form (workers and output directory excluded)."""
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _get(block, key, typ, default):
    if key not in block:
        return default
    val = block[key]
    try:
        if typ is tuple:
            return tuple(val)
        return typ(val)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"config key {key!r}: cannot read {val!r} as {typ.__name__}") from exc


def load_config(path):
    """Read an :class:`ExperimentConfig` from a TOML file.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    DomainError
        On malformed content.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise DomainError(f"{path}: {exc}") from exc
    return config_from_dict(raw)


def config_from_dict(raw):
    unknown = set(raw) - {"truth", "prior", "sim", "study"}
    if unknown:
        raise DomainError(f"unknown config sections: {sorted(unknown)}")
    truth = dict(raw.get("truth", {"family": "zero"}))
    prior = dict(raw.get("prior", {}))
    sim = raw.get("sim", {})
    study = raw.get("study", {})
    return ExperimentConfig(
        truth=truth,
        prior=prior,
        T_grid=_get(study, "T", tuple, ExperimentConfig.T_grid),
        replicates=_get(study, "replicates", int, 20),
        dt=_get(sim, "dt", float, 1e-3),
        seed=_get(study, "seed", int, 0),
        estimator=_get(study, "estimator", str, "posterior_mean"),
        q=_get(study, "q", float, 2.0),
        floor=_get(study, "floor", float, 1e-3),
        x0=_get(sim, "x0", tuple, None),
        burn_in=_get(sim, "burn_in", float, 0.0),
        sim_T=_get(sim, "T", float, None),
        workers=_get(study, "workers", int, 1),
        mass_grid=_get(study, "mass_grid", tuple, ()),
        draws=_get(study, "draws", int, 1000),
        out=_get(study, "out", str, "out"),
    )


# -- truth and priors ----------------------------------------------------------


def build_truth(truth):
    """Potential ``B0`` from a ``[truth]`` block.

    ``matern`` builds a deterministic profile whose Fourier coefficients
    decay like ``(1 + 4 pi^2 |k|^2)^(-(s0+1)/2) |k|^(-d/2 - tail)``, scaled to
    coefficient norm ``amplitude``. ``fourier`` takes explicit
    ``terms = [[k, "cos"|"sin", value], ...]``.
    """
    family = truth.get("family", "matern")
    d = int(truth.get("d", 1))
    if family == "zero":
        return Potential.zero(BasisDescriptor.fourier(d, int(truth.get("K", 1)), truth.get("resolution")))
    if family == "fourier":
        terms = truth.get("terms", [])
        parsed = {}
        for k, part, val in terms:
            freq = tuple(int(c) for c in np.atleast_1d(k))
            parsed[FourierIndex(freq, str(part))] = float(val)
        K = int(truth.get("K", max((max(abs(c) for c in i.freq) for i in parsed), default=1)))
        desc = BasisDescriptor.fourier(d, K, truth.get("resolution"))
        return Potential.from_dict(desc, parsed)
    if family == "matern":
        s0 = float(truth.get("s0", 2.0))
        K = int(truth.get("K", matern_truncation(s0, d)))
        desc = BasisDescriptor.fourier(d, K, truth.get("resolution"))
        idx = desc.indices(constant=False)
        tail = float(truth.get("tail", 0.05))
        k2 = np.array([float(np.dot(i.freq, i.freq)) for i in idx])
        vals = (1 + 4 * np.pi**2 * k2) ** (-(s0 + 1) / 2) * k2 ** (-(d / 2 + tail) / 2)
        vals *= float(truth.get("amplitude", 0.5)) / np.linalg.norm(vals)
        return Potential(CoefficientVector(desc, idx, vals))
    raise DomainError(f"unknown truth family {family!r}")


def build_prior(prior, T, d, resolution=None):
    """Prior spec object for horizon ``T`` from a ``[prior]`` block."""
    kind = prior.get("kind", "gaussian")
    s = float(prior.get("s", 2.0))
    N = int(prior.get("N", 6))
    if kind == "gaussian":
        base = prior.get("base", MATERN)
        band = prior.get("K") if base == MATERN else prior.get("J")
        return GaussianPriorSpec(base, s, float(T), d, None if band is None else int(band), N, resolution)
    if kind == "pexp":
        J = prior.get("J")
        return PExpPriorSpec(float(prior.get("p", 1.0)), s, float(T), d, None if J is None else int(J), N, resolution)
    raise DomainError(f"unknown prior kind {kind!r}")


# -- study cells --------------------------------------------------------------------


def cell_stream(T, replicate):
    """RNG stream of cell ``(T, replicate)``; independent across cells."""
    return (int(round(float(T) * 1000)) << 24) | int(replicate)


@dataclass(frozen=True)
class CellResult:
    T: float
    replicate: int
    seed: int
    error: float = float("nan")
    wall_ms: float = 0.0
    status: str = "ok"
    message: str = ""
    mass: tuple = ()


def _posterior_mass(gp, spec, desc, indices, truth, cfg, T, rng):
    """Monte Carlo ``P(|grad B - grad B0| >= M T^(-s/(2s+d)) | X)`` over the mass grid."""
    pts = desc.grid_points(truth.desc.grid_size)
    G = desc.gradient(indices, pts)  # (n, m, d)
    draws = posterior_sample(gp, rng, size=cfg.draws)
    ref = truth.grad.reshape(truth.d, -1)
    err = np.zeros(cfg.draws)
    for a in range(truth.d):
        diff = np.abs(draws @ G[:, :, a].T - ref[a][None, :])
        err += np.mean(diff**cfg.q, axis=1) ** (1.0 / cfg.q)
    radius = T ** (-spec.s / (2 * spec.s + spec.d))
    return tuple(float(np.mean(err >= M * radius)) for M in cfg.mass_grid)


def estimate_gradient(cfg, truth, path, T, rng=None):
    """Point estimate of ``grad B`` on the truth's grid, plus posterior mass if requested."""
    n = truth.desc.grid_size
    L = truth.desc.table_resolution
    d = truth.d
    mass = ()
    if cfg.estimator == "plugin":
        s = float(cfg.prior.get("s", 2.0))
        J = int(cfg.prior.get("J", level_rule(T, s, d)))
        desc = BasisDescriptor.wavelets(d, J, int(cfg.prior.get("N", 6)), max(L, J + 6))
        if desc.table_resolution != L:
            raise DomainError("plug-in grid does not match the truth grid; raise the truth resolution")
        est = wavelet_density_estimate(path, desc, J)
        return plugin_drift(est, cfg.floor).values, mass
    spec = build_prior(cfg.prior, T, d, resolution=L)
    desc = spec.descriptor()
    indices = spec.indices()
    stats = path_stats(path, desc, indices)
    if cfg.estimator == "posterior_mean":
        if not isinstance(spec, GaussianPriorSpec):
            raise DomainError("the posterior mean is closed-form for Gaussian priors only")
        gp = gaussian_posterior(stats, spec.variances())
        b = gp.mean
        if cfg.mass_grid:
            mass = _posterior_mass(gp, spec, desc, indices, truth, cfg, T, rng)
    else:
        res = pexp_map(stats, spec)
        if not res.converged:
            raise NumericalError(f"MAP did not converge (gradient map {res.grad_map_norm:.3e})")
        b = res.coeffs
        if cfg.mass_grid:
            gp = gaussian_posterior(stats, spec.variances())
            mass = _posterior_mass(gp, spec, desc, indices, truth, cfg, T, rng)
    return gradient_grid(CoefficientVector(desc, indices, b), n), mass


def run_cell(cfg, T, replicate, truth=None):
    """Simulate, estimate and score one ``(T, replicate)`` cell; never raises."""
    t0 = time.perf_counter()
    try:
        truth = build_truth(cfg.truth) if truth is None else truth
        stream = cell_stream(T, replicate)
        sim = SimConfig(T=T, dt=cfg.dt, x0=cfg.x0, seed=cfg.seed, burn_in=cfg.burn_in, stream=stream)
        path = simulate(truth, sim)
        rng = make_rng(cfg.seed, stream + (1 << 23))
        grad, mass = estimate_gradient(cfg, truth, path, T, rng)
        err = error_norms(grad, truth, cfg.q)
        if not np.isfinite(err):
            raise NumericalError("non-finite error")
        status, msg = "ok", ""
    except (RevdiffError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        err, mass, status, msg = float("nan"), (), "failed", f"{type(exc).__name__}: {exc}"
    wall = 1000.0 * (time.perf_counter() - t0)
    return CellResult(float(T), int(replicate), int(cfg.seed), float(err), wall, status, msg, mass)


def _cell_job(args):
    cfg, T, r = args
    return run_cell(cfg, T, r)


# -- slope fit and report ---------------------------------------------------------


def fit_loglog_slope(pairs):
    """Least-squares slope of ``log error`` against ``log T`` with its standard error.

    Parameters
    ----------
    pairs : iterable of (T, error)

    Returns
    -------
    (slope, stderr)
    """
    arr = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
    T, e = arr[:, 0], arr[:, 1]
    if np.any(~(e > 0)) or np.any(~(T > 0)):
        raise DomainError("log-log fit needs positive T and error values")
    if len(np.unique(T)) < 3:
        raise DomainError("log-log fit needs at least 3 distinct T")
    x, y = np.log(T), np.log(e)
    X = np.column_stack([np.ones_like(x), x])
    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = len(x) - 2
    sxx = np.sum((x - x.mean()) ** 2)
    stderr = float(np.sqrt(resid @ resid / dof / sxx)) if dof > 0 else 0.0
    return float(coef[1]), stderr


def theory_slope(s, d):
    return -s / (2 * s + d)


@dataclass(frozen=True)
class RateStudyReport:
    config_hash: str
    dt: float
    T_grid: tuple
    cells: tuple = field(repr=False)
    median: tuple = ()
    iqr: tuple = ()
    slope: float = float("nan")
    slope_stderr: float = float("nan")
    theory_slope: float = float("nan")
    failed: int = 0
    mass_grid: tuple = ()
    mass: tuple = ()
    wall_clock: dict = field(default_factory=dict)

    def to_json(self):
        out = asdict(self)
        out["cells"] = [asdict(c) for c in self.cells]
        return out

    def deterministic_json(self):
        """JSON text with every timing field removed."""
        return json.dumps(_strip_timing(self.to_json()), sort_keys=True, indent=1)


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def assemble_report(cfg, cells, wall_clock=None):
    """Per-T medians, IQRs and the slope fit from finished cells."""
    cells = tuple(sorted(cells, key=lambda c: (c.T, c.replicate)))
    failed = sum(c.status != "ok" for c in cells)
    if cells and failed > MAX_FAILED_FRACTION * len(cells):
        raise StudyError(f"{failed} of {len(cells)} cells failed", failed=failed, total=len(cells))
    med, iqr, mass = [], [], []
    for T in cfg.T_grid:
        errs = np.array([c.error for c in cells if c.T == T and c.status == "ok"])
        if len(errs) == 0:
            raise StudyError(f"no successful cell at T={T}", failed=failed, total=len(cells))
        med.append(float(np.median(errs)))
        q1, q3 = np.percentile(errs, [25, 75])
        iqr.append(float(q3 - q1))
        if cfg.mass_grid:
            m = np.array([c.mass for c in cells if c.T == T and c.status == "ok"])
            mass.append(tuple(float(v) for v in m.mean(axis=0)))
    slope, stderr = fit_loglog_slope(zip(cfg.T_grid, med))
    s = float(cfg.prior.get("s", 2.0))
    return RateStudyReport(
        config_hash=cfg.hash(),
        dt=cfg.dt,
        T_grid=cfg.T_grid,
        cells=cells,
        median=tuple(med),
        iqr=tuple(iqr),
        slope=slope,
        slope_stderr=stderr,
        theory_slope=theory_slope(s, cfg.d),
        failed=failed,
        mass_grid=cfg.mass_grid,
        mass=tuple(mass),
        wall_clock=dict(wall_clock or {}),
    )


def run_rate_study(cfg, workers=None, cell_fn=None):
    """Run every ``(T, replicate)`` cell and fit the log-log slope.

    ``cell_fn(cfg, T, replicate) -> CellResult`` replaces the simulation
    pipeline when given (used to inject synthetic errors).

    Raises
    ------
    StudyError
        If more than 20% of the cells failed.
    """
    workers = cfg.workers if workers is None else workers
    jobs = [(T, r) for T in cfg.T_grid for r in range(cfg.replicates)]
    started = time.time()
    if cell_fn is not None:
        cells = [cell_fn(cfg, T, r) for T, r in jobs]
    elif workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_cell_job, [(cfg, T, r) for T, r in jobs]))
    else:
        truth = build_truth(cfg.truth)
        cells = [run_cell(cfg, T, r, truth) for T, r in jobs]
    finished = time.time()
    return assemble_report(cfg, cells, {"started": started, "finished": finished, "seconds": finished - started})


# -- persistence ---------------------------------------------------------------------


def cells_csv(report, with_timing=True):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["T", "replicate", "seed", "error", "wall_ms"] if with_timing else ["T", "replicate", "seed", "error"]
    w.writerow(cols)
    for c in report.cells:
        row = [repr(c.T), c.replicate, c.seed, repr(c.error)]
        if with_timing:
            row.append(f"{c.wall_ms:.3f}")
        w.writerow(row)
    return buf.getvalue()


def _sha(data):
    return hashlib.sha256(data if isinstance(data, bytes) else data.encode()).hexdigest()


def code_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass(frozen=True)
class RunManifest:
    """Config hash, code version and content hashes of every artifact.

    Every hashed artifact is timing-free, so identical configs give
    identical manifests.
    """

    config_hash: str
    code_version: str
    artifacts: tuple

    def to_json(self):
        return {
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "artifacts": [dict(a) for a in self.artifacts],
        }


def timing_json(report):
    return {
        "wall_clock": dict(report.wall_clock),
        "cells": [{"T": c.T, "replicate": c.replicate, "wall_ms": c.wall_ms} for c in report.cells],
    }


def write_study(report, cfg, out_dir):
    """Write the study outputs to ``out_dir`` and return the manifest.

    ``report.json``, ``cells.csv``, ``config.json`` and ``manifest.json``
    carry no timing and are byte-identical across reruns of one config.
    Wall-clock data goes to ``timing.json``, which the manifest leaves out.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report.json": report.deterministic_json() + "\n",
        "cells.csv": cells_csv(report, with_timing=False),
        "config.json": json.dumps(cfg.to_json(), sort_keys=True, indent=1) + "\n",
    }
    for name, text in files.items():
        (out / name).write_text(text)
    (out / "timing.json").write_text(json.dumps(timing_json(report), sort_keys=True, indent=1) + "\n")
    artifacts = tuple({"file": name, "sha256": _sha(text)} for name, text in files.items())
    manifest = RunManifest(cfg.hash(), code_version(), artifacts)
    (out / "manifest.json").write_text(json.dumps(manifest.to_json(), sort_keys=True, indent=1) + "\n")
    return manifest


def file_manifest(paths, config_hash=""):
    """Manifest of plain files hashed byte for byte."""
    arts = tuple({"file": os.path.basename(str(p)), "sha256": _sha(Path(p).read_bytes())} for p in paths)
    return RunManifest(config_hash, code_version(), arts)
