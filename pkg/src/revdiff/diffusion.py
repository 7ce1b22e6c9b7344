"""Potentials, invariant densities and the generator of the diffusion.

A grid function is an array of shape ``(n,) * d`` holding samples at
``i / n`` per axis. Vector fields on the grid carry a leading axis of
length ``d``.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import FOURIER, CoefficientVector, synthesize, synthesize_grid
from .errors import DomainError, SolverError


# -- spectral calculus on the grid ----------------------------------------------


def _wavenumbers(n, d, axis):
    k = np.fft.fftfreq(n, 1.0 / n)
    shape = [1] * d
    shape[axis] = n
    return k.reshape(shape)


def spectral_gradient(u):
    """Gradient of a periodic grid function by Fourier differentiation."""
    u = np.asarray(u, dtype=float)
    d, n = u.ndim, u.shape[0]
    U = np.fft.fftn(u)
    out = np.empty((d,) + u.shape)
    for a in range(d):
        k = _wavenumbers(n, d, a)
        if n % 2 == 0:
            k = np.where(np.abs(k) == n // 2, 0.0, k)
        out[a] = np.real(np.fft.ifftn(2j * np.pi * k * U))
    return out


def spectral_laplacian(u):
    u = np.asarray(u, dtype=float)
    d, n = u.ndim, u.shape[0]
    k2 = sum(_wavenumbers(n, d, a) ** 2 for a in range(d))
    return np.real(np.fft.ifftn(-4 * np.pi**2 * k2 * np.fft.fftn(u)))


def grid_mean(u):
    """Trapezoid quadrature of a grid function over the unit torus."""
    return float(np.mean(u))


# -- potentials --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Potential:
    """Zero-mean potential ``B`` given by coefficients over a basis.

    The grid values of ``B`` and ``grad B`` at the descriptor's resolution
    are computed once at construction.
    """

    coeffs: CoefficientVector
    values: np.ndarray = field(init=False, repr=False)
    grad: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for idx, c in zip(self.coeffs.indices, self.coeffs.values):
            if idx.is_constant and c != 0.0:
                raise DomainError("the constant coefficient of a potential must be 0")
        desc = self.coeffs.desc
        vals = synthesize_grid(desc, self.coeffs)
        grad = np.stack([synthesize_grid(desc, self.coeffs, derivative=a) for a in range(desc.d)])
        vals.setflags(write=False)
        grad.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "grad", grad)

    @property
    def desc(self):
        return self.coeffs.desc

    @property
    def d(self):
        return self.coeffs.desc.d

    @classmethod
    def zero(cls, desc):
        idx = desc.indices(constant=False)
        return cls(CoefficientVector(desc, idx, np.zeros(len(idx))))

    @classmethod
    def from_dict(cls, desc, mapping):
        """Potential with the given ``{index: value}`` entries, zero elsewhere."""
        idx = desc.indices(constant=False)
        vals = np.zeros(len(idx))
        pos = {i: j for j, i in enumerate(idx)}
        for k, v in mapping.items():
            desc.check_index(k)
            if k not in pos:
                raise DomainError(f"{k!r} is not a valid potential index")
            vals[pos[k]] = v
        return cls(CoefficientVector(desc, idx, vals))

    def __call__(self, x):
        return synthesize(self.desc, self.coeffs, x)

    def fourier_arrays(self):
        """``(freqs, cos_coef, sin_coef)`` with ``B = sum sqrt2 (a cos + b sin)(2 pi k.x)``."""
        if self.desc.kind != FOURIER:
            raise DomainError("not a Fourier potential")
        freqs, a, b = [], [], []
        table = {}
        for idx, c in zip(self.coeffs.indices, self.coeffs.values):
            if idx.is_constant or c == 0.0:
                continue
            ab = table.setdefault(tuple(idx.freq), [0.0, 0.0])
            ab[0 if idx.part == "cos" else 1] += c
        for k, (ca, cb) in table.items():
            freqs.append(k)
            a.append(ca)
            b.append(cb)
        freqs = np.array(freqs, dtype=float).reshape(-1, self.d)
        return freqs, np.array(a), np.array(b)


def grad_potential(P, x):
    """``grad B`` at points ``x``; shape ``(d,)`` for one point else ``(n, d)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 0 or (x.ndim == 1 and len(x) == P.d and P.d > 1)
    pts = x.reshape(-1, P.d)
    out = np.zeros((len(pts), P.d))
    if P.desc.kind == FOURIER:
        freqs, a, b = P.fourier_arrays()
        if len(freqs):
            ph = 2 * np.pi * pts @ freqs.T
            s = np.sqrt(2.0) * 2 * np.pi * (-np.sin(ph) * a + np.cos(ph) * b)
            out = s @ freqs
    else:
        mask = P.coeffs.values != 0.0
        idx = [i for i, m in zip(P.coeffs.indices, mask) if m]
        if idx:
            g = P.desc.gradient(idx, pts)
            out = np.einsum("nmd,m->nd", g, P.coeffs.values[mask])
    return out[0] if single else out


# -- invariant density ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InvariantDensity:
    values: np.ndarray = field(repr=False)
    Z: float

    @property
    def d(self):
        return self.values.ndim


def invariant_density(P):
    """``mu_B = exp(2B) / Z`` on the grid, ``Z`` by trapezoid quadrature."""
    two_b = 2.0 * P.values
    top = two_b.max()
    w = np.exp(two_b - top)
    mass = w.mean()
    mu = w / mass
    mu.setflags(write=False)
    return InvariantDensity(mu, float(np.exp(top) * mass))


# -- drift fields and the generator --------------------------------------------


@dataclass(frozen=True)
class DriftField:
    """Periodic vector field ``b`` with an optional generating potential."""

    func: object
    d: int = 1
    smoothness: float = np.inf
    potential: Potential = None

    def __call__(self, x):
        x = np.mod(np.asarray(x, dtype=float).reshape(-1, self.d), 1.0)
        return np.asarray(self.func(x), dtype=float).reshape(-1, self.d)

    @classmethod
    def from_potential(cls, P):
        return cls(lambda x: grad_potential(P, x), P.d, np.inf, P)

    @classmethod
    def from_grid(cls, values):
        """Drift known only on a grid of shape ``(d, n, ..., n)``."""
        values = np.asarray(values, dtype=float)
        d, n = values.shape[0], values.shape[1]

        def lookup(x):
            i = np.floor(np.mod(x, 1.0) * n).astype(int) % n
            return np.stack([values[a][tuple(i.T)] for a in range(d)], axis=-1)

        return cls(lookup, d)

    def on_grid(self, n):
        if self.potential is not None and self.potential.desc.grid_size == n:
            return np.asarray(self.potential.grad)
        axes = [np.arange(n) / n] * self.d
        pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
        vals = self(pts)
        return np.stack([vals[:, a].reshape((n,) * self.d) for a in range(self.d)])


def _drift_grid(b, u):
    if isinstance(b, DriftField):
        return b.on_grid(u.shape[0])
    b = np.asarray(b, dtype=float)
    if b.shape != (u.ndim,) + u.shape:
        raise DomainError("drift grid does not match the grid function")
    return b


def apply_generator(b, u):
    """``L_b u = 1/2 Laplacian(u) + b . grad(u)`` computed spectrally."""
    u = np.asarray(u, dtype=float)
    bg = _drift_grid(b, u)
    return 0.5 * spectral_laplacian(u) + np.sum(bg * spectral_gradient(u), axis=0)


def solve_poisson(b, f, tol=1e-12, max_iter=10_000, center_tol=1e-8):
    """Zero-mean solution of ``L_b u = f`` by fixed-point iteration.

    Iterates ``u <- (1/2 Laplacian)^{-1} (f - b . grad u)`` in Fourier
    space, the inverse acting on the zero-mean part only. When ``b`` carries
    a potential, ``f`` must be centred under ``mu_b`` within
    ``center_tol``.

    Raises
    ------
    SolverError
        If the relative update does not fall below ``tol`` within
        ``max_iter`` iterations.
    """
    f = np.asarray(f, dtype=float)
    d, n = f.ndim, f.shape[0]
    bg = _drift_grid(b, f)
    if isinstance(b, DriftField) and b.potential is not None:
        mu = invariant_density(b.potential).values
        if mu.shape == f.shape:
            c = abs(grid_mean(f * mu))
            if c > center_tol * max(1.0, np.sqrt(grid_mean(f**2))):
                raise DomainError(f"f is not centred under mu_b (mean {c:.3e})")
    k2 = sum(_wavenumbers(n, d, a) ** 2 for a in range(d))
    inv = np.zeros_like(k2, dtype=float)
    nz = k2 != 0
    inv[nz] = 1.0 / (-2 * np.pi**2 * k2[nz])
    u = np.zeros_like(f)
    resid = np.inf
    for it in range(1, max_iter + 1):
        rhs = f - np.sum(bg * spectral_gradient(u), axis=0)
        new = np.real(np.fft.ifftn(inv * np.fft.fftn(rhs)))
        norm = np.linalg.norm(new)
        step = np.linalg.norm(new - u)
        u = new
        if not np.isfinite(norm):
            break
        if step <= tol * max(norm, np.finfo(float).tiny):
            return u
    if np.all(np.isfinite(u)):
        fn = np.linalg.norm(f)
        resid = np.linalg.norm(apply_generator(bg, u) - f) / (fn if fn > 0 else 1.0)
    raise SolverError(
        f"Poisson iteration did not converge in {max_iter} iterations "
        f"(relative residual {resid:.3e})",
        residual=resid,
        iterations=max_iter,
    )


# -- grid serialisation ----------------------------------------------------------


def save_grid(path, u):
    """Write raw little-endian float64 (row-major) plus a JSON sidecar."""
    u = np.ascontiguousarray(u, dtype="<f8")
    path = Path(path)
    path.write_bytes(u.tobytes(order="C"))
    sidecar = {"d": u.ndim, "resolution": u.shape[-1], "shape": list(u.shape)}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True))


def load_grid(path):
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f8")
    shape = meta.get("shape") or [meta["resolution"]] * meta["d"]
    return data.reshape(shape).astype(float)

