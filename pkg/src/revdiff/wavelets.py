"""Daubechies scaling function and wavelet on a dyadic grid.

The scaling function is computed from its refinement equation

    phi(x) = sqrt(2) * sum_k h_k phi(2x - k)

in two stages: the values at the integers are the fixed point of the
refinement operator restricted to integer nodes, and every further dyadic
level is filled in by one application of the refinement equation. The
resulting table holds the exact values of phi at the nodes ``i / 2**L``.
"""

from functools import lru_cache

import numpy as np
import pywt


@lru_cache(maxsize=None)
def daubechies_filter(vanishing_moments):
    """Orthonormal low-pass reconstruction filter of the Daubechies family.

    Normalised so that ``h.sum() == sqrt(2)``.
    """
    h = np.asarray(pywt.Wavelet(f"db{vanishing_moments}").rec_lo, dtype=float)
    h.setflags(write=False)
    return h


def _integer_values(h):
    S = len(h) - 1
    M = np.zeros((S + 1, S + 1))
    for i in range(S + 1):
        for j in range(S + 1):
            k = 2 * i - j
            if 0 <= k <= S:
                M[i, j] = np.sqrt(2.0) * h[k]
    # fixed point of M with the partition-of-unity normalisation sum(phi) = 1
    A = np.vstack([M - np.eye(S + 1), np.ones((1, S + 1))])
    rhs = np.zeros(S + 2)
    rhs[-1] = 1.0
    phi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    phi[0] = phi[-1] = 0.0
    return phi


@lru_cache(maxsize=None)
def cascade_tables(vanishing_moments, resolution):
    """Tables of phi, psi and their derivatives on ``[0, 2N-1]``.

    Parameters
    ----------
    vanishing_moments : int
        N, the number of vanishing moments of the mother wavelet.
    resolution : int
        L; nodes are ``i / 2**L`` for ``i = 0, ..., (2N-1) * 2**L``.

    Returns
    -------
    phi, psi, dphi, dpsi : ndarray
        Read-only arrays of length ``(2N-1) * 2**L + 1``. Derivatives are
        centred differences of the tables (one-sided past the support ends,
        where the functions vanish).
    """
    h = daubechies_filter(vanishing_moments)
    S = len(h) - 1
    vals = _integer_values(h)
    for lev in range(1, resolution + 1):
        n = S * 2**lev + 1
        new = np.zeros(n)
        new[::2] = vals
        odd = np.arange(1, n, 2)
        for k, hk in enumerate(h):
            # 2x - k at odd nodes, in units of the previous level's spacing
            idx = odd - k * 2 ** (lev - 1)
            ok = (idx >= 0) & (idx < len(vals))
            new[1::2][ok] += np.sqrt(2.0) * hk * vals[idx[ok]]
        vals = new
    phi = vals
    n = len(phi)

    g = np.array([(-1) ** k * h[S - k] for k in range(S + 1)])
    psi = np.zeros(n)
    nodes = np.arange(n)
    for k, gk in enumerate(g):
        idx = 2 * nodes - k * 2**resolution
        ok = (idx >= 0) & (idx < n)
        psi[ok] += np.sqrt(2.0) * gk * phi[idx[ok]]

    step = 2.0**-resolution

    def _diff(t):
        p = np.concatenate([[0.0], t, [0.0]])
        return (p[2:] - p[:-2]) / (2 * step)

    out = (phi, psi, _diff(phi), _diff(psi))
    for a in out:
        a.setflags(write=False)
    return out


def support_length(vanishing_moments):
    return 2 * vanishing_moments - 1
