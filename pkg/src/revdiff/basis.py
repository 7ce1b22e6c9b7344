"""Periodised orthonormal bases of L^2 on the d-torus.

Two families are supported:

* ``fourier``: the real trigonometric basis. Every frequency ``k`` in a
  half-space of ``Z^d`` contributes ``sqrt(2) cos(2 pi k.x)`` and
  ``sqrt(2) sin(2 pi k.x)``; ``k = 0`` is the constant.
* ``daubechies``: tensor-product periodised Daubechies wavelets. At level
  ``l >= 0`` each element is a product over the axes of a level-``l``
  father or mother function with at least one mother factor, so that levels
  ``-1..J`` span the same space as all fathers at level ``J + 1``.

Functions on the torus are sampled on the uniform grid ``i / 2**L`` per
axis, flattened in row-major order.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import NamedTuple, Union

import numpy as np

from .errors import DomainError, PrecisionError, UnsupportedError
from .wavelets import cascade_tables, support_length

FOURIER = "fourier"
DAUBECHIES = "daubechies"

_DEFAULT_RESOLUTION = {1: 12, 2: 8, 3: 6}
_CHUNK = 65536


class WaveletIndex(NamedTuple):
    """Wavelet ``(level, translate, type)``.

    ``translate`` is the row-major flattening of the per-axis translates,
    each in ``0..2**level - 1``. ``type`` is a bitmask over the axes, most
    significant bit first; a set bit selects the mother wavelet on that
    axis. The constant is ``(-1, 0, 0)``.
    """

    level: int
    translate: int = 0
    type: int = 1

    @property
    def is_constant(self):
        return self.level < 0

    def axis_translates(self, d):
        if self.level <= 0:
            return (0,) * d
        n = 2**self.level
        out = []
        r = self.translate
        for _ in range(d):
            out.append(r % n)
            r //= n
        return tuple(reversed(out))


class FourierIndex(NamedTuple):
    """Real Fourier element: ``freq`` in Z^d and ``part`` in {const, cos, sin}."""

    freq: tuple
    part: str = "const"

    @property
    def is_constant(self):
        return self.part == "const"


BasisIndex = Union[WaveletIndex, FourierIndex]


def _in_half_space(k):
    for c in k:
        if c != 0:
            return c > 0
    return False


@dataclass(frozen=True)
class BasisDescriptor:
    """Basis family on ``T^d`` with its band limit and grid resolution.

    ``band`` is the maximal wavelet level J or the maximal frequency K
    (sup-norm). ``table_resolution`` is the dyadic exponent L of both the
    cascade tables and the quadrature grid.
    """

    kind: str
    d: int = 1
    band: int = 3
    vanishing_moments: int = 6
    table_resolution: int = None

    def __post_init__(self):
        if self.kind not in (FOURIER, DAUBECHIES):
            raise DomainError(f"unknown basis kind {self.kind!r}")
        if self.d not in (1, 2, 3):
            raise DomainError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.band < 0:
            raise DomainError("band limit must be non-negative")
        L = self.table_resolution
        if L is None:
            L = _DEFAULT_RESOLUTION[self.d]
            if self.kind == DAUBECHIES:
                # in 1-D, J + 9 keeps grid finite differences of synthesised
                # functions within 1e-3 of the table gradients
                L = max(L, self.band + (9 if self.d == 1 else 6))
            else:
                L = max(L, int(np.ceil(np.log2(4 * max(self.band, 1)))))
            object.__setattr__(self, "table_resolution", L)
        if self.kind == DAUBECHIES and L < self.band + 6:
            raise DomainError(f"table_resolution {L} < J + 6 = {self.band + 6}")
        if self.kind == FOURIER and 2**L < 4 * self.band:
            raise DomainError("grid too coarse for the frequency band")

    @classmethod
    def fourier(cls, d=1, K=3, resolution=None):
        return cls(FOURIER, d, K, table_resolution=resolution)

    @classmethod
    def wavelets(cls, d=1, J=3, N=6, resolution=None):
        return cls(DAUBECHIES, d, J, N, resolution)

    @property
    def grid_size(self):
        return 2**self.table_resolution

    def to_config(self):
        return {
            "kind": self.kind,
            "d": self.d,
            "N": self.vanishing_moments,
            "J": self.band,
            "L_max": self.table_resolution,
        }

    @classmethod
    def from_config(cls, block):
        return cls(
            kind=block["kind"],
            d=int(block.get("d", 1)),
            band=int(block.get("J", block.get("K", 3))),
            vanishing_moments=int(block.get("N", 6)),
            table_resolution=block.get("L_max"),
        )

    def indices(self, band=None, constant=True):
        """Ordered index list up to ``band`` (defaults to the descriptor's)."""
        band = self.band if band is None else band
        out = []
        if self.kind == DAUBECHIES:
            if constant:
                out.append(WaveletIndex(-1, 0, 0))
            for l in range(band + 1):
                for e in range(1, 2**self.d):
                    out.extend(WaveletIndex(l, r, e) for r in range(2 ** (l * self.d)))
            return out
        if constant:
            out.append(FourierIndex((0,) * self.d, "const"))
        ks = [k for k in product(range(-band, band + 1), repeat=self.d) if _in_half_space(k)]
        ks.sort(key=lambda k: (max(abs(c) for c in k), k))
        for k in ks:
            out.append(FourierIndex(k, "cos"))
            out.append(FourierIndex(k, "sin"))
        return out

    def check_index(self, idx):
        if self.kind == DAUBECHIES:
            if not isinstance(idx, WaveletIndex):
                raise DomainError(f"{idx!r} is not a wavelet index")
            if idx.level < -1 or idx.level > self.band:
                raise DomainError(f"level {idx.level} outside -1..{self.band}")
            if idx.level == -1:
                if idx.translate != 0 or idx.type != 0:
                    raise DomainError("the constant element is (-1, 0, 0)")
                return
            if not 0 <= idx.translate < 2 ** (idx.level * self.d):
                raise DomainError(f"translate {idx.translate} out of range at level {idx.level}")
            if not 1 <= idx.type < 2**self.d:
                raise DomainError(f"type {idx.type} out of range")
            return
        if not isinstance(idx, FourierIndex):
            raise DomainError(f"{idx!r} is not a Fourier index")
        k = tuple(idx.freq)
        if len(k) != self.d or max((abs(c) for c in k), default=0) > self.band:
            raise DomainError(f"frequency {k} outside the band {self.band}")
        if idx.part == "const":
            if any(k):
                raise DomainError("const part requires k = 0")
        elif idx.part not in ("cos", "sin") or not _in_half_space(k):
            raise DomainError(f"invalid Fourier element {idx!r}")

    def grid_points(self, resolution=None):
        n = self.grid_size if resolution is None else resolution
        axes = [np.arange(n) / n] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    # -- pointwise evaluation -------------------------------------------------

    def evaluate(self, indices, x):
        """Matrix ``[Phi_j(x_i)]`` of shape ``(n_points, len(indices))``."""
        x = _as_points(x, self.d)
        if self.kind == FOURIER:
            return _fourier_eval(indices, x, gradient=False)
        return _wavelet_eval(self, indices, x, gradient=False)

    def gradient(self, indices, x):
        """Array ``[d/dx_k Phi_j(x_i)]`` of shape ``(n_points, len(indices), d)``."""
        x = _as_points(x, self.d)
        if self.kind == FOURIER:
            return _fourier_eval(indices, x, gradient=True)
        return _wavelet_eval(self, indices, x, gradient=True)


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, d) if d > 1 else x.reshape(-1, 1)
    x = np.mod(x, 1.0)
    x[x >= 1.0] = 0.0
    return x


def _fourier_eval(indices, x, gradient):
    n, d = x.shape
    m = len(indices)
    ks = np.array([idx.freq for idx in indices], dtype=np.int64).reshape(m, d)
    K = int(np.abs(ks).max()) if m else 0
    # rows e^{2 pi i j x_a} for j = -K..K by repeated multiplication: one exp per axis
    powers = []
    for a in range(d):
        z = np.exp(2j * np.pi * x[:, a])
        tab = np.empty((2 * K + 1, n), dtype=complex)
        tab[K] = 1.0
        for j in range(1, K + 1):
            tab[K + j] = tab[K + j - 1] * z
        tab[:K] = np.conj(tab[: K : -1])
        powers.append(tab)
    waves = powers[0][ks[:, 0] + K]
    for a in range(1, d):
        waves = waves * powers[a][ks[:, a] + K]
    parts = [idx.part for idx in indices]
    is_cos = np.array([p == "cos" for p in parts])
    is_sin = np.array([p == "sin" for p in parts])
    r2 = np.sqrt(2.0)
    if not gradient:
        out = np.ones((m, n))
        out[is_cos] = r2 * waves[is_cos].real
        out[is_sin] = r2 * waves[is_sin].imag
        return out.T
    scal = np.zeros((m, n))
    scal[is_cos] = -r2 * waves[is_cos].imag
    scal[is_sin] = r2 * waves[is_sin].real
    return scal.T[:, :, None] * (2 * np.pi * ks)[None, :, :]


def _periodized(table, level, resolution, support, x):
    """Level-``level`` periodised table function at points ``x`` for all translates."""
    nt = 2**level
    a = np.mod(nt * x[:, None] - np.arange(nt)[None, :], nt)
    scale = 2.0**resolution
    pad = np.concatenate([table, np.zeros(int(nt * scale) + 2)])
    out = np.zeros_like(a)
    for j in range(int(np.ceil(support / nt))):
        u = (a + j * nt) * scale
        i = np.floor(u).astype(np.int64)
        frac = u - i
        out += pad[i] * (1.0 - frac) + pad[i + 1] * frac
    return 2.0 ** (level / 2) * out


def _wavelet_eval(desc, indices, x, gradient):
    n, d = x.shape
    phi, psi, dphi, dpsi = cascade_tables(desc.vanishing_moments, desc.table_resolution)
    S = support_length(desc.vanishing_moments)
    L = desc.table_resolution
    cache = {}

    def axis_tab(level, axis, mother, deriv):
        key = (level, axis, mother, deriv)
        if key not in cache:
            tab = (dpsi if mother else dphi) if deriv else (psi if mother else phi)
            v = _periodized(tab, level, L, S, x[:, axis])
            if deriv:
                v = v * 2.0**level
            cache[key] = v
        return cache[key]

    m = len(indices)
    out = np.empty((n, m, d)) if gradient else np.empty((n, m))
    for j, idx in enumerate(indices):
        if idx.level < 0:
            if gradient:
                out[:, j, :] = 0.0
            else:
                out[:, j] = 1.0
            continue
        rs = idx.axis_translates(d)
        mothers = [bool(idx.type >> (d - 1 - a) & 1) for a in range(d)]
        factors = [axis_tab(idx.level, a, mothers[a], False)[:, rs[a]] for a in range(d)]
        if not gradient:
            out[:, j] = np.prod(factors, axis=0)
            continue
        for k in range(d):
            f = list(factors)
            f[k] = axis_tab(idx.level, k, mothers[k], True)[:, rs[k]]
            out[:, j, k] = np.prod(f, axis=0)
    return out


# -- coefficient vectors ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    """Real coefficients over an ordered list of basis indices."""

    desc: BasisDescriptor
    indices: tuple
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        idx = tuple(self.indices)
        vals = np.array(self.values, dtype=float).reshape(-1)
        if len(vals) != len(idx):
            raise DomainError(f"{len(vals)} values for {len(idx)} indices")
        if len(set(idx)) != len(idx):
            raise DomainError("indices are not unique")
        for i in idx:
            self.desc.check_index(i)
        vals.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.indices)

    def as_dict(self):
        return dict(zip(self.indices, self.values))

    def with_values(self, values):
        return CoefficientVector(self.desc, self.indices, values)

    def to_json(self):
        return {
            "basis": self.desc.to_config(),
            "indices": [_index_to_json(i) for i in self.indices],
            "values": [float(v) for v in self.values],
        }

    @classmethod
    def from_json(cls, obj):
        desc = BasisDescriptor.from_config(obj["basis"])
        idx = [_index_from_json(desc, i) for i in obj["indices"]]
        return cls(desc, idx, obj["values"])


def _index_to_json(idx):
    if isinstance(idx, WaveletIndex):
        return [idx.level, idx.translate, idx.type]
    return [list(idx.freq), idx.part]


def _index_from_json(desc, item):
    if desc.kind == DAUBECHIES:
        return WaveletIndex(*map(int, item))
    return FourierIndex(tuple(int(c) for c in item[0]), item[1])


# -- operations ------------------------------------------------------------------


def eval_basis(desc, idx, x):
    """Value of a single basis element at one point."""
    desc.check_index(idx)
    return float(desc.evaluate([idx], np.asarray(x, dtype=float).reshape(1, desc.d))[0, 0])


def eval_gradient(desc, idx, x):
    """Gradient of a single basis element at one point, shape ``(d,)``."""
    desc.check_index(idx)
    return desc.gradient([idx], np.asarray(x, dtype=float).reshape(1, desc.d))[0, 0, :]


def dimension(desc, J):
    """Dimension of the span of all elements up to band ``J``."""
    if J < 0:
        raise DomainError("J must be non-negative")
    if desc.kind == DAUBECHIES:
        return 1 + (2**desc.d - 1) * sum(2 ** (l * desc.d) for l in range(J + 1))
    return (2 * J + 1) ** desc.d


def synthesize(desc, coeffs, x):
    """Evaluate ``sum_j c_j Phi_j`` at points ``x``; returns a scalar for one point."""
    pts = _as_points(x, desc.d)
    out = np.empty(len(pts))
    for s in range(0, len(pts), _CHUNK):
        out[s : s + _CHUNK] = desc.evaluate(coeffs.indices, pts[s : s + _CHUNK]) @ coeffs.values
    if np.ndim(x) == 0 or (np.ndim(x) == 1 and desc.d > 1 and len(x) == desc.d):
        return float(out[0])
    return out


def synthesize_grid(desc, coeffs, resolution=None, derivative=None):
    """Values (or one partial derivative) of a coefficient vector on the grid.

    Returns an array of shape ``(n,) * d``.
    """
    n = desc.grid_size if resolution is None else resolution
    if desc.kind == FOURIER:
        spec = _fourier_spectrum(desc, coeffs, n)
        if derivative is not None:
            k = np.fft.fftfreq(n, 1.0 / n)
            shape = [1] * desc.d
            shape[derivative] = n
            spec = spec * (2j * np.pi * k.reshape(shape))
        return np.real(np.fft.ifftn(spec)) * n**desc.d
    mats = _wavelet_axis_matrices(desc, _max_level(coeffs.indices), n)
    C = _coefficient_tensor(desc, coeffs.indices, coeffs.values, mats)
    out = C
    for axis in range(desc.d):
        E = mats.deriv if derivative == axis else mats.values
        out = np.tensordot(out, E, axes=([0], [1]))
    return out


def _max_level(indices):
    return max((i.level for i in indices), default=0)


def _fourier_spectrum(desc, coeffs, n):
    spec = np.zeros((n,) * desc.d, dtype=complex)
    r2 = np.sqrt(2.0)
    for idx, c in zip(coeffs.indices, coeffs.values):
        k = tuple(int(v) % n for v in idx.freq)
        mk = tuple(int(-v) % n for v in idx.freq)
        if idx.part == "const":
            spec[k] += c
        elif idx.part == "cos":
            spec[k] += r2 * c / 2
            spec[mk] += r2 * c / 2
        else:
            spec[k] += r2 * c / 2j
            spec[mk] -= r2 * c / 2j
    return spec


class _AxisMatrices(NamedTuple):
    values: np.ndarray  # (n, q)
    deriv: np.ndarray  # (n, q)
    columns: dict  # (level, mother, translate) -> column


@lru_cache(maxsize=64)
def _wavelet_axis_matrices(desc, J, n):
    """1-D evaluation matrices of the constant and all level <= J functions."""
    phi, psi, dphi, dpsi = cascade_tables(desc.vanishing_moments, desc.table_resolution)
    S = support_length(desc.vanishing_moments)
    L = desc.table_resolution
    x = np.arange(n) / n
    vals = [np.ones((n, 1))]
    ders = [np.zeros((n, 1))]
    columns = {(-1, False, 0): 0}
    col = 1
    for l in range(max(J, 0) + 1):
        for mother, tab, dtab in ((False, phi, dphi), (True, psi, dpsi)):
            vals.append(_periodized(tab, l, L, S, x))
            ders.append(_periodized(dtab, l, L, S, x) * 2.0**l)
            for r in range(2**l):
                columns[(l, mother, r)] = col
                col += 1
    V = np.hstack(vals)
    D = np.hstack(ders)
    V.setflags(write=False)
    D.setflags(write=False)
    return _AxisMatrices(V, D, columns)


def _axis_columns(desc, idx, mats):
    if idx.level < 0:
        return (0,) * desc.d
    rs = idx.axis_translates(desc.d)
    return tuple(
        mats.columns[(idx.level, bool(idx.type >> (desc.d - 1 - a) & 1), rs[a])] for a in range(desc.d)
    )


def _coefficient_tensor(desc, indices, values, mats):
    q = mats.values.shape[1]
    C = np.zeros((q,) * desc.d)
    for idx, c in zip(indices, values):
        C[_axis_columns(desc, idx, mats)] += c
    return C


@lru_cache(maxsize=32)
def _wavelet_gram(desc, J, n):
    mats = _wavelet_axis_matrices(desc, J, n)
    G1 = mats.values.T @ mats.values / n
    idx = desc.indices(J)
    cols = np.array([_axis_columns(desc, i, mats) for i in idx])
    G = np.ones((len(idx), len(idx)))
    for a in range(desc.d):
        G *= G1[np.ix_(cols[:, a], cols[:, a])]
    return np.linalg.cholesky(G)


def _grid_samples(desc, f, J):
    if callable(f):
        pts = desc.grid_points()
        vals = np.asarray(f(pts), dtype=float).reshape((desc.grid_size,) * desc.d)
        return vals
    vals = np.asarray(f, dtype=float)
    if vals.ndim == 1 and desc.d > 1:
        n = round(len(vals) ** (1.0 / desc.d))
        vals = vals.reshape((n,) * desc.d)
    n = vals.shape[0]
    if vals.shape != (n,) * desc.d:
        raise DomainError(f"grid samples must have shape (n,)*{desc.d}")
    need = 2 ** (J + 2) if desc.kind == DAUBECHIES else 4 * max(J, 1)
    if n < need:
        raise PrecisionError(f"grid of {n} points per axis is coarser than {need}")
    return vals


def project(desc, J, f):
    """Coefficients of the L^2 projection of ``f`` onto the span up to band ``J``.

    ``f`` is a callable on ``(n, d)`` point arrays or grid samples of shape
    ``(n,) * d``. Inner products are grid (trapezoid) sums; for wavelets the
    grid Gram matrix of the retained elements is divided out, which turns
    the result into the exact grid-orthogonal projection.
    """
    if J < 0:
        raise DomainError("J must be non-negative")
    vals = _grid_samples(desc, f, J)
    n = vals.shape[0]
    indices = desc.indices(J)
    if desc.kind == FOURIER:
        F = np.fft.fftn(vals) / n**desc.d
        out = np.empty(len(indices))
        r2 = np.sqrt(2.0)
        for j, idx in enumerate(indices):
            c = F[tuple(int(v) % n for v in idx.freq)]
            if idx.part == "const":
                out[j] = c.real
            elif idx.part == "cos":
                out[j] = r2 * c.real
            else:
                out[j] = -r2 * c.imag
        return CoefficientVector(desc, indices, out)
    mats = _wavelet_axis_matrices(desc, J, n)
    T = vals
    for _ in range(desc.d):
        T = np.tensordot(T, mats.values, axes=([0], [0]))
    T = T / n**desc.d
    b = np.array([T[_axis_columns(desc, i, mats)] for i in indices])
    chol = _wavelet_gram(desc, J, n)
    c = np.linalg.solve(chol.T, np.linalg.solve(chol, b))
    return CoefficientVector(desc, indices, c)


def grid_inner(desc, a, b):
    """Trapezoid inner product of two grid functions on the torus."""
    return float(np.mean(np.asarray(a) * np.asarray(b)))


def besov_norm(desc, coeffs, t, p, q):
    """Wavelet-sequence Besov norm ``||f||_{B^t_{pq}}``.

    Level ``l`` is weighted by ``2**(l (t + d/2 - d/p))``; the constant
    (level -1) is weighted like level 0. ``p`` or ``q`` may be ``np.inf``.
    """
    if desc.kind != DAUBECHIES:
        raise UnsupportedError("Besov norms are defined through the wavelet basis only")
    if p < 1 or q < 1:
        raise DomainError("p and q must be >= 1")
    d = desc.d
    inv_p = 0.0 if np.isinf(p) else 1.0 / p
    levels = {}
    for idx, c in zip(coeffs.indices, coeffs.values):
        levels.setdefault(idx.level, []).append(abs(c))
    terms = []
    for l, cs in sorted(levels.items()):
        cs = np.asarray(cs)
        inner = cs.max() if np.isinf(p) else np.sum(cs**p) ** (1.0 / p)
        terms.append(2.0 ** (max(l, 0) * (t + d / 2 - d * inv_p)) * inner)
    terms = np.asarray(terms)
    if len(terms) == 0:
        return 0.0
    if np.isinf(q):
        return float(terms.max())
    return float(np.sum(terms**q) ** (1.0 / q))
