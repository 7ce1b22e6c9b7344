"""Euler-Maruyama paths of ``dX = grad B(X) dt + dW`` and path functionals.

Paths are stored unwrapped in ``R^d``; reduction modulo 1 happens only when
a function on the torus is evaluated along the path.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .basis import FOURIER
from .errors import DomainError, SimulationError

MAGIC = b"TDF1"
_HEADER = struct.Struct("<4sIdQ")
_CHUNK = 1 << 17
MAX_STEPS = 10**9


def make_rng(seed, stream=0):
    """Counter-based generator; ``stream`` selects an independent key."""
    key = (int(seed) & (2**64 - 1)) | ((int(stream) & (2**64 - 1)) << 64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SimConfig:
    T: float
    dt: float = 1e-3
    x0: tuple = (0.0,)
    seed: int = 0
    burn_in: float = 0.0
    stream: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if not self.T >= self.dt:
            raise DomainError("T must be at least dt")
        if self.burn_in < 0:
            raise DomainError("burn-in must be non-negative")
        if (self.T + self.burn_in) / self.dt > MAX_STEPS:
            raise DomainError(f"more than {MAX_STEPS} steps requested")
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))

    @property
    def n_steps(self):
        return int(np.floor(self.T / self.dt + 1e-9))

    @property
    def d(self):
        return len(self.x0)


@dataclass(frozen=True, eq=False)
class PathRecord:
    """Unwrapped positions ``X_{i dt}``, ``i = 0..n``."""

    dt: float
    positions: np.ndarray = field(repr=False)
    seed: int = 0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def d(self):
        return self.positions.shape[1]

    @property
    def n_points(self):
        return self.positions.shape[0]

    @property
    def T(self):
        return (self.n_points - 1) * self.dt

    @property
    def x0(self):
        return self.positions[0]

    def increments(self):
        return np.diff(self.positions, axis=0)


# -- integrators -------------------------------------------------------------------


@njit(cache=True)
def _em_fourier(x0, dt, freqs, a, b, dW):
    n, d = dW.shape
    m = freqs.shape[0]
    out = np.empty((n + 1, d))
    out[0] = x0
    c = np.sqrt(2.0) * 2.0 * np.pi
    x = x0.copy()
    drift = np.empty(d)
    for i in range(n):
        for k in range(d):
            drift[k] = 0.0
        for j in range(m):
            ph = 0.0
            for k in range(d):
                ph += freqs[j, k] * x[k]
            ph *= 2.0 * np.pi
            s = c * (b[j] * np.cos(ph) - a[j] * np.sin(ph))
            for k in range(d):
                drift[k] += s * freqs[j, k]
        for k in range(d):
            x[k] = x[k] + drift[k] * dt + dW[i, k]
        out[i + 1] = x
    return out


@njit(cache=True)
def _em_grid(x0, dt, grad, n_grid, dW):
    # grad: (d, n_grid**d) row-major; multilinear periodic interpolation
    n, d = dW.shape
    out = np.empty((n + 1, d))
    out[0] = x0
    x = x0.copy()
    drift = np.empty(d)
    base = np.empty(d, np.int64)
    frac = np.empty(d)
    for i in range(n):
        for k in range(d):
            u = (x[k] - np.floor(x[k])) * n_grid
            j = int(np.floor(u))
            frac[k] = u - j
            base[k] = j % n_grid
            drift[k] = 0.0
        for corner in range(2**d):
            w = 1.0
            flat = 0
            for k in range(d):
                bit = (corner >> (d - 1 - k)) & 1
                w *= frac[k] if bit else 1.0 - frac[k]
                flat = flat * n_grid + (base[k] + bit) % n_grid
            if w != 0.0:
                for k in range(d):
                    drift[k] += w * grad[k, flat]
        for k in range(d):
            x[k] = x[k] + drift[k] * dt + dW[i, k]
        out[i + 1] = x
    return out


def integrate_increments(P, x0, dt, dW):
    """Euler-Maruyama driven by given Brownian increments ``dW`` of shape ``(n, d)``."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    dW = np.ascontiguousarray(dW, dtype=float).reshape(-1, len(x0))
    if P.d != len(x0):
        raise DomainError("x0 dimension does not match the potential")
    if P.desc.kind == FOURIER:
        freqs, a, b = P.fourier_arrays()
        out = _em_fourier(x0, dt, np.ascontiguousarray(freqs), a, b, dW)
    else:
        grad = np.ascontiguousarray(P.grad.reshape(P.d, -1))
        out = _em_grid(x0, dt, grad, P.desc.grid_size, dW)
    bad = ~np.isfinite(out).all(axis=1)
    if bad.any():
        step = int(np.argmax(bad))
        raise SimulationError(f"non-finite state at step {step}", step=step)
    return out


def brownian_increments(cfg, n_steps=None):
    rng = make_rng(cfg.seed, cfg.stream)
    n = cfg.n_steps if n_steps is None else n_steps
    return np.sqrt(cfg.dt) * rng.standard_normal((n, cfg.d))


def refine_increments(dW, dt, rng):
    """Brownian-bridge infill: split every increment into two halves."""
    dW = np.asarray(dW, dtype=float)
    first = 0.5 * dW + np.sqrt(dt / 4.0) * rng.standard_normal(dW.shape)
    out = np.empty((2 * dW.shape[0],) + dW.shape[1:])
    out[0::2] = first
    out[1::2] = dW - first
    return out


def simulate(P, cfg):
    """Simulate a path of ``dX = grad B(X) dt + dW`` from ``cfg.x0``.

    Deterministic in ``(P, cfg)``. A positive ``cfg.burn_in`` is simulated
    first and discarded.
    """
    if cfg.d != P.d:
        raise DomainError("x0 dimension does not match the potential")
    n_burn = int(np.floor(cfg.burn_in / cfg.dt + 1e-9))
    dW = brownian_increments(cfg, n_burn + cfg.n_steps)
    x0 = np.asarray(cfg.x0)
    if n_burn:
        x0 = integrate_increments(P, x0, cfg.dt, dW[:n_burn])[-1]
    out = integrate_increments(P, x0, cfg.dt, dW[n_burn:])
    return PathRecord(cfg.dt, out, cfg.seed)


# -- path functionals -----------------------------------------------------------


def _chunks(n):
    for s in range(0, n, _CHUNK):
        yield s, min(s + _CHUNK, n)


def time_integral(path, f):
    """Left Riemann sum ``sum_{i<n} f(X_i mod 1) dt``."""
    X = path.positions
    n = path.n_points - 1
    total = 0.0
    for s, e in _chunks(n):
        total += float(np.sum(f(np.mod(X[s:e], 1.0))))
    return total * path.dt


def ito_integral(path, g):
    """Left-point Ito sum ``sum_{i<n} g(X_i mod 1) . (X_{i+1} - X_i)``."""
    X = path.positions
    n = path.n_points - 1
    total = 0.0
    for s, e in _chunks(n):
        gv = np.asarray(g(np.mod(X[s:e], 1.0)), dtype=float).reshape(e - s, path.d)
        total += float(np.sum(gv * (X[s + 1 : e + 1] - X[s:e])))
    return total


def ergodic_average(path, phi):
    return time_integral(path, phi) / path.T


def quadratic_variation(path):
    return float(np.sum(path.increments() ** 2))


# -- TDF1 files ------------------------------------------------------------------


def write_path(path, target):
    """Write ``path`` in the TDF1 format."""
    pos = np.ascontiguousarray(path.positions, dtype="<f8")
    with open(target, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, path.d, float(path.dt), path.n_points))
        fh.write(np.asarray(path.x0, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", int(path.seed) & (2**64 - 1)))
        fh.write(pos.tobytes(order="C"))


def read_path(source):
    raw = Path(source).read_bytes()
    magic, d, dt, n = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DomainError(f"{source}: not a TDF1 file")
    off = _HEADER.size + 8 * d
    (seed,) = struct.unpack_from("<Q", raw, off)
    off += 8
    pos = np.frombuffer(raw, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    return PathRecord(dt, pos.astype(float), seed)
