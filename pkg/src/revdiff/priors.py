"""Priors on the potential: rescaled Gaussian series and p-exponential series."""

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .basis import BasisDescriptor, CoefficientVector
from .diffusion import Potential
from .errors import DomainError

MATERN = "matern"
WAVELET_SERIES = "wavelet_series"


def matern_fourier_coeff(k, s, d):
    """Fourier coefficient ``(2 pi)^d / (1 + 4 pi^2 |k|^2)^(s+1)`` of the periodic Matern kernel."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    return (2 * np.pi) ** d / (1.0 + 4 * np.pi**2 * float(k @ k)) ** (s + 1)


def _shell_masses(s, d, n_shells):
    masses = np.zeros(n_shells + 1)
    if d == 1:
        j = np.arange(1, n_shells + 1, dtype=float)
        masses[1:] = 2 * (1 + 4 * np.pi**2 * j**2) ** -(s + 1)
        return masses
    rng = np.arange(-n_shells, n_shells + 1)
    grids = np.meshgrid(*([rng] * d), indexing="ij")
    sup = np.max(np.abs(np.stack(grids)), axis=0)
    norm2 = sum(g.astype(float) ** 2 for g in grids)
    w = (1 + 4 * np.pi**2 * norm2) ** -(s + 1)
    np.add.at(masses, sup.ravel(), w.ravel())
    masses[0] = 0.0
    return masses


@lru_cache(maxsize=None)
def matern_truncation(s, d, tol=1e-6):
    """Smallest K with omitted spectral mass beyond ``|k|_inf > K`` below ``tol`` of the total."""
    n_shells = {1: 20000, 2: 400, 3: 60}[d]
    masses = _shell_masses(s, d, n_shells)
    total = masses.sum()
    tail = total - np.cumsum(masses)
    ok = np.nonzero(tail < tol * total)[0]
    if len(ok) == 0:
        raise DomainError(f"Matern tail too heavy for s={s}, d={d}")
    return int(max(ok[0], 1))


@dataclass(frozen=True)
class GaussianPriorSpec:
    """Rescaled Gaussian prior ``B = W / T^(d/(4s+2d))``.

    ``band`` is the Matern truncation K (default from
    :func:`matern_truncation`) or the wavelet level J (default from
    ``J = round(log2(T) / (2s + d))``).
    """

    base: str = MATERN
    s: float = 2.0
    T: float = 1.0
    d: int = 1
    band: int = None
    vanishing_moments: int = 6
    resolution: int = None

    def __post_init__(self):
        if self.base not in (MATERN, WAVELET_SERIES):
            raise DomainError(f"unknown Gaussian prior base {self.base!r}")
        lower = self.d / 2 + max(self.d / 2 - 1, 0)
        if not self.s > lower:
            raise DomainError(f"s must exceed {lower} for d={self.d}")
        if not self.T > 0:
            raise DomainError("T must be positive")
        if self.band is None:
            if self.base == MATERN:
                band = matern_truncation(float(self.s), self.d)
            else:
                band = level_rule(self.T, self.s, self.d)
            object.__setattr__(self, "band", band)

    @property
    def scale(self):
        return self.T ** (-self.d / (4 * self.s + 2 * self.d))

    def descriptor(self):
        if self.base == MATERN:
            return BasisDescriptor.fourier(self.d, self.band, self.resolution)
        return BasisDescriptor.wavelets(self.d, self.band, self.vanishing_moments, self.resolution)

    def indices(self):
        return self.descriptor().indices(constant=False)

    def std(self):
        """Prior standard deviation of every retained coefficient."""
        idx = self.indices()
        if self.base == MATERN:
            w = np.array([matern_fourier_coeff(i.freq, self.s, self.d) for i in idx])
            return self.scale * np.sqrt(w)
        lev = np.array([i.level for i in idx], dtype=float)
        return self.scale * 2.0 ** (-lev * (self.s + 1))

    def variances(self):
        return self.std() ** 2


def level_rule(T, s, d):
    """Truncation level with ``2^J ~ T^(1/(2s+d))``."""
    return max(int(round(np.log2(T) / (2 * s + d))), 0)


@dataclass(frozen=True)
class PExpPriorSpec:
    """Scaled p-exponential wavelet series prior."""

    p: float = 1.0
    s: float = 2.0
    T: float = 1.0
    d: int = 1
    J: int = None
    vanishing_moments: int = 6
    resolution: int = None

    def __post_init__(self):
        if not 1.0 <= self.p <= 2.0:
            raise DomainError(f"p must lie in [1, 2], got {self.p}")
        if not self.T > 0:
            raise DomainError("T must be positive")
        if self.J is None:
            object.__setattr__(self, "J", level_rule(self.T, self.s, self.d))
        bound = max(self.d / 2, 2) + self.d / self.p - 1
        if not self.s > bound:
            warnings.warn(
                f"s={self.s} is outside the range s > {bound} where the contraction rate is guaranteed",
                stacklevel=2,
            )

    @property
    def exponent(self):
        return self.s + 1 + self.d / 2 - self.d / self.p

    @property
    def precision(self):
        """``T^(d/(2s+d))``, the factor multiplying the penalty."""
        return self.T ** (self.d / (2 * self.s + self.d))

    @property
    def scale(self):
        return self.precision ** (-1.0 / self.p)

    def descriptor(self):
        return BasisDescriptor.wavelets(self.d, self.J, self.vanishing_moments, self.resolution)

    def indices(self):
        return self.descriptor().indices(constant=False)

    def level_weights(self):
        lev = np.array([i.level for i in self.indices()], dtype=float)
        return 2.0 ** (-lev * self.exponent)

    def penalty_weights(self):
        """``w`` with ``-log prior = sum w |B|^p / p`` (up to a constant)."""
        return self.precision * self.level_weights() ** (-self.p)

    def variances(self):
        """Coefficient variances when ``p = 2``."""
        if self.p != 2:
            raise DomainError("variances are defined for p = 2 only")
        return 1.0 / self.penalty_weights()


def sample_gaussian_prior(spec, rng):
    g = rng.standard_normal(len(spec.indices()))
    return Potential(CoefficientVector(spec.descriptor(), spec.indices(), spec.std() * g))


def sample_pexp_scalar(p, rng, size=None):
    """Draws from the density proportional to ``exp(-|x|^p / p)``."""
    if not 1.0 <= p <= 2.0:
        raise DomainError(f"p must lie in [1, 2], got {p}")
    v = rng.gamma(1.0 / p, 1.0, size=size)
    sign = np.where(rng.random(size=size) < 0.5, -1.0, 1.0)
    return sign * (p * v) ** (1.0 / p)


def sample_pexp_prior(spec, rng):
    xi = sample_pexp_scalar(spec.p, rng, size=len(spec.indices()))
    vals = spec.scale * spec.level_weights() * xi
    return Potential(CoefficientVector(spec.descriptor(), spec.indices(), vals))


def _aligned(spec, coeffs):
    idx = spec.indices()
    if isinstance(coeffs, CoefficientVector):
        pos = {i: j for j, i in enumerate(idx)}
        out = np.zeros(len(idx))
        for i, v in zip(coeffs.indices, coeffs.values):
            if i not in pos:
                if v == 0.0 and i.is_constant:
                    continue
                raise DomainError(f"coefficient {i!r} outside the prior support")
            out[pos[i]] = v
        return out
    out = np.asarray(coeffs, dtype=float).reshape(-1)
    if len(out) != len(idx):
        raise DomainError(f"expected {len(idx)} coefficients, got {len(out)}")
    return out


def log_prior_density(spec, coeffs):
    """Log prior density of a coefficient vector, up to an additive constant."""
    b = _aligned(spec, coeffs)
    if isinstance(spec, GaussianPriorSpec):
        return float(-0.5 * np.sum(b**2 / spec.variances()))
    return float(-np.sum(spec.penalty_weights() * np.abs(b) ** spec.p) / spec.p)
