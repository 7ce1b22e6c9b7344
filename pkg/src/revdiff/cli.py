"""Command-line entry point.

Exit status is 0 on success, 1 on a usage or input error and 2 on a
numerical failure. All randomness derives from ``--seed`` (or the
config's seed when the flag is absent).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .basis import BasisDescriptor, CoefficientVector, synthesize_grid
from .diffusion import DriftField, apply_generator, grid_mean, invariant_density, solve_poisson
from .errors import (
    DomainError,
    NumericalError,
    PrecisionError,
    SamplerError,
    SimulationError,
    SolverError,
    StudyError,
    UnsupportedError,
)
from .estimator import plugin_drift, wavelet_density_estimate
from .inference import gaussian_posterior, path_stats, pexp_map
from .priors import GaussianPriorSpec, sample_gaussian_prior, sample_pexp_prior
from .sde import SimConfig, make_rng, read_path, simulate, write_path

NUMERICAL = (NumericalError, SolverError, SimulationError, SamplerError, StudyError, np.linalg.LinAlgError)
USAGE = (DomainError, PrecisionError, UnsupportedError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _emit(obj, out):
    text = json.dumps(obj, sort_keys=True, indent=1)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _config(args):
    cfg = harness.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = harness.ExperimentConfig(**{**cfg.__dict__, "seed": args.seed})
    return cfg


def _prior_block(path):
    return harness.load_config(path).prior if path else {}


# -- subcommands -------------------------------------------------------------------


def cmd_simulate(args):
    cfg = _config(args)
    truth = harness.build_truth(cfg.truth)
    sim = SimConfig(T=cfg.sim_T, dt=cfg.dt, x0=cfg.x0, seed=cfg.seed, burn_in=cfg.burn_in)
    path = simulate(truth, sim)
    write_path(path, args.out)
    print(f"wrote {path.n_points} points (d={path.d}, dt={path.dt}) to {args.out}")


def cmd_prior_sample(args):
    cfg = _config(args)
    T = float(cfg.prior.get("T", cfg.sim_T))
    spec = harness.build_prior(cfg.prior, T, cfg.d)
    rng = make_rng(cfg.seed)
    if isinstance(spec, GaussianPriorSpec):
        draw = sample_gaussian_prior(spec, rng)
    else:
        draw = sample_pexp_prior(spec, rng)
    _emit(draw.coeffs.to_json(), args.out)


def _path_and_spec(args):
    path = read_path(args.path)
    prior = _prior_block(args.prior)
    spec = harness.build_prior(prior, path.T, path.d)
    stats = path_stats(path, spec.descriptor(), spec.indices())
    return path, spec, stats


def cmd_posterior(args):
    path, spec, stats = _path_and_spec(args)
    if not isinstance(spec, GaussianPriorSpec):
        raise DomainError("posterior needs a Gaussian prior; use map for p-exponential priors")
    gp = gaussian_posterior(stats, spec.variances())
    obj = CoefficientVector(spec.descriptor(), spec.indices(), gp.mean).to_json()
    obj["std"] = [float(v) for v in gp.std]
    obj["T"] = path.T
    obj["dt"] = path.dt
    _emit(obj, args.out)


def cmd_map(args):
    path, spec, stats = _path_and_spec(args)
    res = pexp_map(stats, spec)
    obj = CoefficientVector(spec.descriptor(), spec.indices(), res.coeffs).to_json()
    obj.update(
        objective=res.objective,
        iterations=res.iterations,
        grad_map_norm=res.grad_map_norm,
        converged=bool(res.converged),
        T=path.T,
    )
    _emit(obj, args.out)
    if not res.converged:
        raise NumericalError("MAP iteration cap reached")


def cmd_estimate(args):
    path = read_path(args.path)
    desc = BasisDescriptor.wavelets(path.d, args.J, args.N)
    est = wavelet_density_estimate(path, desc, args.J)
    drift = plugin_drift(est, args.floor)
    obj = est.coeffs.to_json()
    obj.update(J=args.J, T=path.T, floor=drift.floor, floored_fraction=drift.floored_fraction)
    _emit(obj, args.out)


def cmd_rate_study(args):
    cfg = _config(args)
    workers = args.workers if args.workers is not None else cfg.workers
    report = harness.run_rate_study(cfg, workers=workers)
    out = args.out or cfg.out
    harness.write_study(report, cfg, out)
    print(
        f"slope {report.slope:.4f} +/- {report.slope_stderr:.4f} "
        f"(theory {report.theory_slope:.4f}); {report.failed} failed cells; wrote {out}"
    )


def cmd_poisson_check(args):
    """Solve ``L_b u = f`` and report the relative residual.

    Without a config this is the driftless case ``f = cos(2 pi x)`` with its
    closed-form solution. With a config the drift is ``grad B0`` and ``f`` is
    a random band-limited function centred under ``mu_B0``.
    """
    if args.config:
        cfg = _config(args)
        truth = harness.build_truth(cfg.truth)
        b = DriftField.from_potential(truth)
        n = truth.desc.grid_size
        rng = make_rng(cfg.seed)
        desc = BasisDescriptor.fourier(truth.d, 4, truth.desc.table_resolution)
        idx = desc.indices(constant=False)
        f = synthesize_grid(desc, CoefficientVector(desc, idx, rng.standard_normal(len(idx))))
        f = f - grid_mean(f * invariant_density(truth).values)
        u = solve_poisson(b, f)
        exact_err = None
    else:
        n = 256
        x = np.arange(n) / n
        f = np.cos(2 * np.pi * x)
        b = np.zeros((1, n))
        u = solve_poisson(b, f)
        exact_err = float(np.max(np.abs(u + np.cos(2 * np.pi * x) / (2 * np.pi**2))))
    resid = float(np.linalg.norm(apply_generator(b, u) - f) / np.linalg.norm(f))
    obj = {"residual": resid, "mean_u": float(grid_mean(u)), "resolution": n}
    if exact_err is not None:
        obj["max_error_vs_exact"] = exact_err
    _emit(obj, args.out)
    if resid > 1e-8:
        raise SolverError(f"relative residual {resid:.3e} exceeds 1e-8", residual=resid)


# -- parser ----------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="revdiff", description="Bayesian inference for reversible diffusions on the torus.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("simulate", cmd_simulate, "simulate a path under the configured truth")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)

    sp = add("prior-sample", cmd_prior_sample, "draw a potential from the configured prior")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)

    for name, func, help_ in (
        ("posterior", cmd_posterior, "conjugate Gaussian posterior from a path"),
        ("map", cmd_map, "MAP estimate under the configured prior"),
    ):
        sp = add(name, func, help_)
        sp.add_argument("--path", required=True)
        sp.add_argument("--prior", help="config file whose [prior] section is used")
        sp.add_argument("--out")

    sp = add("estimate", cmd_estimate, "wavelet density estimate and plug-in drift")
    sp.add_argument("--path", required=True)
    sp.add_argument("--J", type=int, required=True)
    sp.add_argument("--N", type=int, default=6)
    sp.add_argument("--floor", type=float, default=1e-3)
    sp.add_argument("--out")

    sp = add("rate-study", cmd_rate_study, "run the contraction-rate study")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=int)

    sp = add("poisson-check", cmd_poisson_check, "verify the Poisson solver residual")
    sp.add_argument("--config")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        args.func(args)
    except NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except USAGE as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
