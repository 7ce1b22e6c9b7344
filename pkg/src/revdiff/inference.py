"""Likelihood statistics, conjugate posterior, MAP estimation and Langevin sampling.

For a potential ``B = sum_k B_k h_k`` the Girsanov log-likelihood of a
path is ``-1/2 B' Sigma B + B' H`` with

    Sigma[k, k'] = int_0^T grad h_k(X_t) . grad h_k'(X_t) dt
    H[k]         = int_0^T grad h_k(X_t) . dX_t

so the pair ``(Sigma, H)`` is all an inference routine needs from the data.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .basis import BasisDescriptor, CoefficientVector, _index_from_json, _index_to_json
from .errors import DomainError, NumericalError, SamplerError
from .priors import GaussianPriorSpec, PExpPriorSpec

_CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class SufficientStats:
    desc: BasisDescriptor
    indices: tuple
    Sigma: np.ndarray = field(repr=False)
    H: np.ndarray = field(repr=False)
    T: float
    dt: float = 0.0

    def __post_init__(self):
        S = np.array(self.Sigma, dtype=float)
        H = np.array(self.H, dtype=float).reshape(-1)
        m = len(self.indices)
        if S.shape != (m, m) or H.shape != (m,):
            raise DomainError("Sigma/H shapes do not match the index list")
        S.setflags(write=False)
        H.setflags(write=False)
        object.__setattr__(self, "indices", tuple(self.indices))
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "H", H)

    @property
    def m(self):
        return len(self.indices)


def path_stats(path, desc, indices=None):
    """``(Sigma, H)`` by left-point quadrature along the path's own time grid."""
    if path.T < 10 * path.dt:
        raise DomainError(f"path too short: T={path.T} < 10 dt")
    if indices is None:
        indices = desc.indices(constant=False)
    indices = tuple(indices)
    if any(i.is_constant for i in indices):
        raise DomainError("the constant element carries no information and must be excluded")
    for i in indices:
        desc.check_index(i)
    m, d = len(indices), desc.d
    X = path.positions
    n = path.n_points - 1
    Sigma = np.zeros((m, m))
    H = np.zeros(m)
    for s in range(0, n, _CHUNK):
        e = min(s + _CHUNK, n)
        G = desc.gradient(indices, np.mod(X[s:e], 1.0))  # (n, m, d)
        Gf = G.transpose(0, 2, 1).reshape(-1, m)
        dX = (X[s + 1 : e + 1] - X[s:e]).reshape(-1)
        Sigma += Gf.T @ Gf
        H += Gf.T @ dX
    Sigma *= path.dt
    Sigma = 0.5 * (Sigma + Sigma.T)
    tr = np.trace(Sigma)
    if m and tr > 0 and np.linalg.eigvalsh(Sigma)[0] < 0:
        Sigma = Sigma + 1e-12 * tr / m * np.eye(m)
    return SufficientStats(desc, indices, Sigma, H, path.T, path.dt)


# -- disk cache ---------------------------------------------------------------------


def stats_key(path, desc, indices):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(path.positions, dtype="<f8").tobytes())
    h.update(repr(float(path.dt)).encode())
    h.update(json.dumps(desc.to_config(), sort_keys=True).encode())
    h.update(json.dumps([_index_to_json(i) for i in indices]).encode())
    return h.hexdigest()


def save_stats(stats, target, key=""):
    """Write ``<target>.json`` plus raw little-endian float64 ``Sigma`` then ``H``."""
    target = Path(target)
    meta = {
        "basis": stats.desc.to_config(),
        "indices": [_index_to_json(i) for i in stats.indices],
        "T": stats.T,
        "dt": stats.dt,
        "hash": key,
    }
    target.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True))
    raw = np.concatenate([stats.Sigma.ravel(), stats.H]).astype("<f8")
    target.with_suffix(".bin").write_bytes(raw.tobytes())


def load_stats(target):
    target = Path(target)
    meta = json.loads(target.with_suffix(".json").read_text())
    desc = BasisDescriptor.from_config(meta["basis"])
    idx = [_index_from_json(desc, i) for i in meta["indices"]]
    m = len(idx)
    raw = np.frombuffer(target.with_suffix(".bin").read_bytes(), dtype="<f8")
    return SufficientStats(desc, idx, raw[: m * m].reshape(m, m), raw[m * m :], meta["T"], meta["dt"])


def cached_path_stats(path, desc, indices, cache_dir):
    """``path_stats`` memoised on disk under the content hash of its inputs."""
    indices = tuple(indices)
    key = stats_key(path, desc, indices)
    target = Path(cache_dir) / key
    if target.with_suffix(".json").exists():
        return load_stats(target)
    stats = path_stats(path, desc, indices)
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    save_stats(stats, target, key)
    return stats


# -- likelihood ---------------------------------------------------------------------


def _coeff_array(stats, coeffs):
    if isinstance(coeffs, CoefficientVector):
        lookup = coeffs.as_dict()
        extra = set(lookup) - set(stats.indices)
        if any(not i.is_constant or lookup[i] != 0.0 for i in extra):
            raise DomainError("coefficients outside the statistics' index set")
        if set(stats.indices) - set(lookup):
            raise DomainError("coefficients do not cover the statistics' index set")
        return np.array([lookup[i] for i in stats.indices])
    b = np.asarray(coeffs, dtype=float).reshape(-1)
    if b.shape != (stats.m,):
        raise DomainError(f"expected {stats.m} coefficients, got {b.size}")
    return b


def log_likelihood(stats, coeffs):
    b = _coeff_array(stats, coeffs)
    return float(-0.5 * b @ stats.Sigma @ b + b @ stats.H)


def log_likelihood_grad(stats, coeffs):
    b = _coeff_array(stats, coeffs)
    return stats.H - stats.Sigma @ b


# -- conjugate Gaussian posterior ------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    mean: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)
    prior_precision: np.ndarray = field(repr=False)
    chol: np.ndarray = field(repr=False)
    indices: tuple = ()

    @property
    def std(self):
        return np.sqrt(np.diag(self.cov))


def gaussian_posterior(stats, prior_variances):
    """``N((Sigma + U^-1)^-1 H, (Sigma + U^-1)^-1)`` for a diagonal prior covariance ``U``."""
    v = np.asarray(prior_variances, dtype=float).reshape(-1)
    if v.shape != (stats.m,):
        raise DomainError("one prior variance per coefficient is required")
    if np.any(~(v > 0)):
        raise DomainError("prior variances must be positive")
    prec = 1.0 / v
    A = stats.Sigma + np.diag(prec)
    try:
        factor = cho_factor(A, lower=True)
        mean = cho_solve(factor, stats.H)
        cov = cho_solve(factor, np.eye(stats.m))
        cov = 0.5 * (cov + cov.T)
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"posterior precision is not positive definite (condition {np.linalg.cond(A):.3e})"
        ) from exc
    return GaussianPosterior(mean, cov, prec, L, stats.indices)


def posterior_sample(gp, rng, size=None):
    m = len(gp.mean)
    if size is None:
        return gp.mean + gp.chol @ rng.standard_normal(m)
    g = rng.standard_normal((size, m))
    return gp.mean[None, :] + g @ gp.chol.T


# -- p-exponential MAP ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SeparablePenalty:
    """Generic penalty ``sum_k w_k |B_k|^p / p`` over the statistics' index set."""

    p: float
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 1.0 <= self.p <= 2.0:
            raise DomainError(f"p must lie in [1, 2], got {self.p}")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if np.any(~(w > 0)):
            raise DomainError("penalty weights must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def penalty_terms(spec):
    """``(p, w)`` such that ``-log prior = sum w |B|^p / p``."""
    if isinstance(spec, SeparablePenalty):
        return float(spec.p), spec.weights
    if isinstance(spec, PExpPriorSpec):
        return float(spec.p), spec.penalty_weights()
    if isinstance(spec, GaussianPriorSpec):
        return 2.0, 1.0 / spec.variances()
    raise DomainError(f"unsupported prior {spec!r}")


def _check_alignment(stats, spec):
    if isinstance(spec, SeparablePenalty):
        if len(spec.weights) != stats.m:
            raise DomainError("penalty weights do not match the statistics' index set")
        return
    if tuple(spec.indices()) != stats.indices:
        raise DomainError("statistics and prior use different index sets")


def pexp_objective(stats, spec, coeffs):
    """Negative log posterior ``1/2 B'Sigma B - B'H + sum w |B|^p / p``."""
    _check_alignment(stats, spec)
    b = _coeff_array(stats, coeffs)
    p, w = penalty_terms(spec)
    return float(0.5 * b @ stats.Sigma @ b - b @ stats.H + np.sum(w * np.abs(b) ** p) / p)


def prox_penalty(v, t, w, p, iters=100):
    """Coordinatewise ``argmin_x (x - v)^2 / (2t) + w |x|^p / p``."""
    v = np.asarray(v, dtype=float)
    c = t * np.broadcast_to(w, v.shape)
    if p == 1.0:
        return np.sign(v) * np.maximum(np.abs(v) - c, 0.0)
    if p == 2.0:
        return v / (1.0 + c)
    a = np.abs(v)
    # root of phi(y) = y + c y^(p-1) - a on [0, a]; phi is increasing and concave
    lo = np.zeros_like(a)
    hi = a.copy()
    y = a / (1.0 + c)
    y = np.where(y > 0, y, 0.5 * a)
    for _ in range(iters):
        f = y + c * y ** (p - 1) - a
        lo = np.where(f < 0, y, lo)
        hi = np.where(f >= 0, y, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = f / (1.0 + c * (p - 1) * y ** (p - 2))
        y_new = y - step
        bad = ~np.isfinite(y_new) | (y_new <= lo) | (y_new >= hi)
        y_new = np.where(bad, 0.5 * (lo + hi), y_new)
        if np.all(np.abs(y_new - y) <= 1e-15 * (1.0 + a)):
            y = y_new
            break
        y = y_new
    return np.sign(v) * np.where(a > 0, y, 0.0)


def power_iteration(A, iters=1000, tol=1e-12, seed=0):
    """Largest eigenvalue of a symmetric positive semidefinite matrix."""
    m = A.shape[0]
    if m == 0:
        return 0.0
    x = np.random.default_rng(seed).standard_normal(m)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = A @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        new = float(x @ y)
        x = y / ny
        if abs(new - lam) <= tol * abs(new):
            lam = new
            break
        lam = new
    # power iteration approaches from below; pad so that 1/L stays a safe step
    return max(lam, float(x @ A @ x)) * (1 + 1e-6)


@dataclass(frozen=True, eq=False)
class MapResult:
    coeffs: np.ndarray = field(repr=False)
    objective: float
    iterations: int
    grad_map_norm: float
    converged: bool = True


def pexp_map(stats, spec, tol=1e-9, max_iter=100_000, init=None):
    """Minimiser of the negative log posterior by accelerated proximal gradient.

    Uses step ``1/lambda_max(Sigma)``, gradient-based restarts, and stops
    once the gradient-mapping norm is below ``tol * (1 + |H|)``.
    """
    _check_alignment(stats, spec)
    p, w = penalty_terms(spec)
    S, H = stats.Sigma, stats.H
    lam = power_iteration(S)
    t = 1.0 / lam if lam > 0 else 1.0
    target = tol * (1.0 + np.linalg.norm(H))

    def obj(b):
        return float(0.5 * b @ S @ b - b @ H + np.sum(w * np.abs(b) ** p) / p)

    x = np.zeros(stats.m) if init is None else np.array(init, dtype=float)
    y = x.copy()
    k = 1.0
    gnorm = np.inf
    it = 0
    for it in range(1, int(max_iter) + 1):
        x_new = prox_penalty(y - t * (S @ y - H), t, w, p)
        gmap = (y - x_new) / t
        gnorm = float(np.linalg.norm(gmap))
        if gnorm <= target:
            x = x_new
            break
        if gmap @ (x_new - x) > 0:
            k = 1.0
            y = x_new.copy()
        else:
            k_new = 0.5 * (1 + np.sqrt(1 + 4 * k * k))
            y = x_new + ((k - 1) / k_new) * (x_new - x)
            k = k_new
        x = x_new
    converged = gnorm <= target
    return MapResult(x, obj(x), it, gnorm, converged)


def langevin_sample(stats, spec, step, n_steps, rng, init=None, moreau_yosida=None):
    """Unadjusted Langevin chain targeting ``exp(-objective)``.

    For ``p > 1`` the update is ``B - step * grad(objective) + sqrt(2 step) g``.
    For ``p = 1`` the non-smooth penalty is replaced by its Moreau-Yosida
    envelope with parameter ``moreau_yosida`` (default ``step``). The chain
    starts at the MAP unless ``init`` is given. Returns ``(n_steps + 1, m)``.
    """
    _check_alignment(stats, spec)
    p, w = penalty_terms(spec)
    S, H = stats.Sigma, stats.H
    x = pexp_map(stats, spec).coeffs if init is None else np.array(init, dtype=float)
    lam_my = step if moreau_yosida is None else moreau_yosida
    chain = np.empty((n_steps + 1, stats.m))
    chain[0] = x
    if step == 0:
        chain[1:] = x
        return chain
    scale = np.sqrt(2.0 * step)
    for j in range(n_steps):
        g = S @ x - H
        if p == 1.0:
            g = g + (x - prox_penalty(x, lam_my, w, 1.0)) / lam_my
        else:
            g = g + w * np.abs(x) ** (p - 1) * np.sign(x)
        x = x - step * g + scale * rng.standard_normal(stats.m)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > 1e6:
            raise SamplerError(f"Langevin chain diverged at step {j + 1}")
        chain[j + 1] = x
    return chain
