"""Brute-force reference computations shared by the test modules."""

import numpy as np
from scipy.stats import multivariate_normal

from revdiff.basis import BasisDescriptor
from revdiff.inference import SufficientStats


def grid_posterior(Sigma, H, prior_var, n=400, width=7.0, center=None, scale=None):
    """Posterior ``exp(-1/2 b'Sigma b + b'H - 1/2 sum b^2 / v)`` on an ``n x n`` midpoint grid.

    Returns ``(grid_mean, density, axes, cell_area)`` with ``density``
    normalised by quadrature.
    """
    prec = np.diag(1.0 / np.asarray(prior_var))
    A = Sigma + prec
    if center is None:
        # crude box from the unnormalised Hessian; no use of the closed-form mean
        center = np.zeros(2)
        for _ in range(200):
            center = center - 0.5 * (A @ center - H) / np.max(np.diag(A))
    if scale is None:
        scale = 1.0 / np.sqrt(np.diag(A))
    axes = [c + s * width * (np.arange(n) + 0.5 - n / 2) / (n / 2) for c, s in zip(center, scale)]
    b0, b1 = np.meshgrid(*axes, indexing="ij")
    B = np.stack([b0.ravel(), b1.ravel()], axis=1)
    logp = -0.5 * np.einsum("ni,ij,nj->n", B, Sigma, B) + B @ H - 0.5 * np.sum(B**2 / np.asarray(prior_var), axis=1)
    logp -= logp.max()
    w = np.exp(logp)
    area = (axes[0][1] - axes[0][0]) * (axes[1][1] - axes[1][0])
    dens = w / (w.sum() * area)
    mean = (B * dens[:, None]).sum(axis=0) * area
    return mean, dens.reshape(n, n), axes, area


def tv_to_gaussian(dens, axes, area, mean, cov):
    b0, b1 = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([b0.ravel(), b1.ravel()], axis=1)
    g = multivariate_normal(mean, cov).pdf(pts).reshape(dens.shape)
    return 0.5 * np.sum(np.abs(dens - g)) * area


def grid_min_l1(Sigma, H, w, lo=-2.0, hi=2.0, step=1e-3):
    """Exhaustive minimiser of ``1/2 b'Sigma b - b'H + sum w |b|`` on a square grid."""
    ax = np.arange(lo, hi + step / 2, step)
    best, arg = np.inf, None
    for i0 in range(0, len(ax), 500):
        b0 = ax[i0 : i0 + 500][:, None]
        b1 = ax[None, :]
        f = (
            0.5 * (Sigma[0, 0] * b0**2 + 2 * Sigma[0, 1] * b0 * b1 + Sigma[1, 1] * b1**2)
            - H[0] * b0
            - H[1] * b1
            + w[0] * np.abs(b0)
            + w[1] * np.abs(b1)
        )
        k = np.argmin(f)
        if f.flat[k] < best:
            best = f.flat[k]
            r, c = np.unravel_index(k, f.shape)
            arg = np.array([ax[i0 + r], ax[c]])
    return arg


def random_stats(desc, indices, rng, scale=1.0, T=1.0):
    m = len(indices)
    A = rng.standard_normal((m, m + 3))
    Sigma = scale * (A @ A.T / (m + 3) + 0.1 * np.eye(m))
    H = scale * rng.standard_normal(m)
    return SufficientStats(desc, indices, Sigma, H, T)


def toy_stats(Sigma, H):
    desc = BasisDescriptor.fourier(1, 1)
    return SufficientStats(desc, desc.indices(constant=False), Sigma, H, 1.0)
