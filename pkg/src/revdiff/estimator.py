"""Occupation-time wavelet estimator of the invariant density and the plug-in drift."""

from dataclasses import dataclass, field

import numpy as np

from .basis import DAUBECHIES, CoefficientVector, synthesize_grid
from .diffusion import spectral_gradient
from .errors import DomainError

_CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    coeffs: CoefficientVector
    values: np.ndarray = field(repr=False)
    J: int
    T: float

    @property
    def desc(self):
        return self.coeffs.desc


@dataclass(frozen=True, eq=False)
class DriftEstimate:
    values: np.ndarray = field(repr=False)
    floor: float
    floored_fraction: float = 0.0


def wavelet_density_estimate(path, desc, J):
    """``mu_hat = sum_{l<=J} beta_lr Phi_lr`` with ``beta_lr = (1/T) int Phi_lr(X_t) dt``."""
    if desc.kind != DAUBECHIES:
        raise DomainError("the density estimator uses the wavelet basis")
    if not 0 <= J <= desc.band:
        raise DomainError(f"J={J} outside the descriptor's levels 0..{desc.band}")
    indices = desc.indices(J)
    X = path.positions
    n = path.n_points - 1
    beta = np.zeros(len(indices))
    for s in range(0, n, _CHUNK):
        e = min(s + _CHUNK, n)
        beta += desc.evaluate(indices, np.mod(X[s:e], 1.0)).sum(axis=0)
    beta *= path.dt / path.T
    coeffs = CoefficientVector(desc, indices, beta)
    grid = synthesize_grid(desc, coeffs)
    grid.setflags(write=False)
    return DensityEstimate(coeffs, grid, J, path.T)


def plugin_drift(est, floor=1e-3):
    """``1/2 grad log max(mu_hat, floor)`` by spectral differentiation on the grid."""
    if not floor > 0:
        raise DomainError("floor must be positive")
    mu = np.asarray(est.values if hasattr(est, "values") else est, dtype=float)
    clipped = np.maximum(mu, floor)
    vals = 0.5 * spectral_gradient(np.log(clipped))
    return DriftEstimate(vals, floor, float(np.mean(mu < floor)))


def error_norms(candidate, truth, q=2.0):
    """``sum_i ||candidate_i - d_i B0||_q`` by grid quadrature.

    ``candidate`` has shape ``(d, n, ..., n)`` on the truth's grid.
    """
    if not 1.0 <= q <= 2.0:
        raise DomainError("q must lie in [1, 2]")
    cand = np.asarray(getattr(candidate, "values", candidate), dtype=float)
    ref = np.asarray(truth.grad)
    if cand.shape != ref.shape:
        raise DomainError(f"grid mismatch: {cand.shape} vs {ref.shape}")
    diff = np.abs(cand - ref).reshape(ref.shape[0], -1)
    return float(np.sum(np.mean(diff**q, axis=1) ** (1.0 / q)))


def gradient_grid(coeffs, resolution=None):
    """Gradient of a coefficient vector on the grid, shape ``(d, n, ..., n)``."""
    return np.stack(
        [synthesize_grid(coeffs.desc, coeffs, resolution, derivative=a) for a in range(coeffs.desc.d)]
    )
