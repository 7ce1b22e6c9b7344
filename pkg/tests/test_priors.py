import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import gamma

from revdiff.basis import BasisDescriptor, CoefficientVector, besov_norm, project, synthesize_grid
from revdiff.diffusion import grid_mean
from revdiff.errors import DomainError
from revdiff.priors import (
    MATERN,
    WAVELET_SERIES,
    GaussianPriorSpec,
    PExpPriorSpec,
    log_prior_density,
    matern_fourier_coeff,
    matern_truncation,
    sample_gaussian_prior,
    sample_pexp_prior,
    sample_pexp_scalar,
)
from revdiff.sde import make_rng


def test_matern_coefficient_values():
    assert matern_fourier_coeff((0,), 2.0, 1) == pytest.approx(2 * np.pi)
    assert matern_fourier_coeff((0, 0), 2.0, 2) == pytest.approx((2 * np.pi) ** 2)
    assert matern_fourier_coeff((1,), 2.0, 1) == pytest.approx(2 * np.pi / (1 + 4 * np.pi**2) ** 3)


@given(st.lists(st.integers(-6, 6), min_size=2, max_size=2), st.lists(st.integers(-6, 6), min_size=2, max_size=2))
def test_matern_coefficient_monotone(k1, k2):
    if np.dot(k1, k1) <= np.dot(k2, k2):
        assert matern_fourier_coeff(k1, 2.5, 2) >= matern_fourier_coeff(k2, 2.5, 2)


@pytest.mark.parametrize("s,d,K", [(2.0, 1, 12), (3.0, 1, 5), (2.0, 2, 22), (3.0, 2, 7)])
def test_matern_truncation(s, d, K):
    assert matern_truncation(s, d) == K


def test_gaussian_spec_validation():
    with pytest.raises(DomainError):
        GaussianPriorSpec(MATERN, s=0.4, T=1.0, d=1)
    with pytest.raises(DomainError):
        GaussianPriorSpec(MATERN, s=1.9, T=1.0, d=3)
    with pytest.raises(DomainError):
        GaussianPriorSpec(MATERN, s=2.0, T=0.0, d=1)
    with pytest.raises(DomainError):
        GaussianPriorSpec("brownian", s=2.0, T=1.0)
    assert GaussianPriorSpec(WAVELET_SERIES, s=2.0, T=1000.0, d=1).band == 2


def test_pexp_spec_validation():
    with pytest.raises(DomainError):
        PExpPriorSpec(p=2.5)
    with pytest.warns(UserWarning):
        PExpPriorSpec(p=1.0, s=1.5, T=10.0, d=1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        PExpPriorSpec(p=1.0, s=2.5, T=10.0, d=1)


def test_rescaling_law():
    for base, s, d in [(MATERN, 2.0, 1), (WAVELET_SERIES, 2.0, 2), (MATERN, 3.0, 2)]:
        a = GaussianPriorSpec(base, s, 7.0, d, band=3)
        b = GaussianPriorSpec(base, s, 7.0 * 2 ** (2 * s + d), d, band=3)
        assert np.allclose(b.std() / a.std(), 2.0 ** (-d / 2), rtol=1e-13)


def test_gaussian_draw_zero_mean_and_deterministic():
    for spec in (GaussianPriorSpec(MATERN, 2.0, 100.0, 2, band=4), GaussianPriorSpec(WAVELET_SERIES, 2.0, 100.0, 1)):
        P = sample_gaussian_prior(spec, make_rng(3))
        assert abs(grid_mean(P.values)) <= 1e-10
        Q = sample_gaussian_prior(spec, make_rng(3))
        assert np.array_equal(P.coeffs.values, Q.coeffs.values)


def test_gaussian_coefficient_variance():
    T, s, d = 50.0, 2.0, 1
    spec = GaussianPriorSpec(MATERN, s, T, d)
    rng = make_rng(4)
    draws = np.array([sample_gaussian_prior(spec, rng).coeffs.values for _ in range(10_000)])
    for j, idx in enumerate(spec.indices()[:6]):
        expected = T ** (-d / (2 * s + d)) * (2 * np.pi) ** d * (1 + 4 * np.pi**2 * np.dot(idx.freq, idx.freq)) ** (-(s + 1))
        assert abs(draws[:, j].var() / expected - 1.0) <= 0.05


def test_matern_covariance_reproduction():
    s, d = 2.0, 1
    spec = GaussianPriorSpec(MATERN, s, 1.0, d)
    x = np.linspace(0.03, 0.9, 8)
    desc = spec.descriptor()
    E = desc.evaluate(spec.indices(), x)
    rng = make_rng(5)
    g = rng.standard_normal((20_000, len(spec.indices())))
    samples = (g * spec.std()) @ E.T
    emp = samples.T @ samples / len(samples)
    K = spec.descriptor().indices(constant=False)
    kper = np.zeros((8, 8))
    for k in {i.freq for i in K}:
        w = matern_fourier_coeff(k, s, d)
        # the complex pair e_k e_-k summed over +-k gives 2 cos(2 pi k (x - y))
        kper += 2 * w * np.cos(2 * np.pi * k[0] * (x[:, None] - x[None, :]))
    assert np.linalg.norm(emp - kper) / np.linalg.norm(kper) <= 0.05


def test_pexp_scalar_moments():
    rng = make_rng(6)
    z = sample_pexp_scalar(2.0, rng, size=100_000)
    kurt = np.mean((z - z.mean()) ** 4) / z.var() ** 2
    assert abs(kurt - 3.0) <= 0.1
    lap = sample_pexp_scalar(1.0, rng, size=100_000)
    assert abs(lap.var() / 2.0 - 1.0) <= 0.05
    for p in (1.0, 1.5, 2.0):
        x = sample_pexp_scalar(p, rng, size=100_000)
        assert abs(x.mean()) <= 3 * x.std() / np.sqrt(len(x))


def test_pexp_scalar_density_shape():
    p = 1.5
    x = sample_pexp_scalar(p, make_rng(7), size=200_000)
    hist, edges = np.histogram(x, bins=40, range=(-3, 3))
    mid = 0.5 * (edges[1:] + edges[:-1])
    norm = 2 * p ** (1 / p - 1) * gamma(1 / p)
    dens = np.exp(-np.abs(mid) ** p / p) / norm
    emp = hist / (len(x) * (edges[1] - edges[0]))
    assert np.max(np.abs(emp - dens)) < 0.02


def test_pexp_draw_in_span_and_zero_mean():
    spec = PExpPriorSpec(1.0, 2.5, 500.0, 1)
    P = sample_pexp_prior(spec, make_rng(8))
    assert abs(grid_mean(P.values)) <= 1e-10
    big = BasisDescriptor.wavelets(1, spec.J + 2, resolution=P.desc.table_resolution)
    c = project(big, spec.J + 2, P.values)
    high = np.array([v for i, v in zip(c.indices, c.values) if i.level > spec.J])
    assert np.max(np.abs(high)) <= 1e-8


def test_pexp_support_identity():
    spec = PExpPriorSpec(1.3, 2.5, 300.0, 1, J=4)
    rng = make_rng(9)
    xi_rng = make_rng(9)
    P = sample_pexp_prior(spec, rng)
    xi = sample_pexp_scalar(spec.p, xi_rng, size=len(spec.indices()))
    scaled = P.coeffs.with_values(P.coeffs.values * spec.precision ** (1 / spec.p))
    norm = besov_norm(spec.descriptor(), scaled, spec.s + 1, spec.p, spec.p)
    assert norm == pytest.approx(np.sum(np.abs(xi) ** spec.p) ** (1 / spec.p), rel=1e-12)


def test_pexp_p2_matches_gaussian_series():
    T, s, d = 200.0, 2.0, 1
    pe = PExpPriorSpec(2.0, s, T, d, J=2)
    ga = GaussianPriorSpec(WAVELET_SERIES, s, T, d, band=2)
    # the level weights of the two constructions coincide at p = 2
    assert np.allclose(pe.level_weights() * pe.scale, ga.std(), rtol=1e-13)
    r1, r2 = make_rng(10), make_rng(11)
    a = np.array([sample_pexp_prior(pe, r1).coeffs.values[0] for _ in range(10_000)])
    b = np.array([sample_gaussian_prior(ga, r2).coeffs.values[0] for _ in range(10_000)])
    assert abs(a.var() / b.var() - 1.0) <= 0.05


def test_log_prior_density():
    spec = PExpPriorSpec(1.5, 2.5, 100.0, 1, J=3)
    idx = spec.indices()
    assert log_prior_density(spec, np.zeros(len(idx))) == 0.0
    j = 5
    beta = -0.7
    v = np.zeros(len(idx))
    v[j] = beta
    l = idx[j].level
    expected = -(spec.precision / spec.p) * 2 ** (spec.p * l * (spec.s + 1 + 0.5 - 1 / spec.p)) * abs(beta) ** spec.p
    assert log_prior_density(spec, v) == pytest.approx(expected, rel=1e-13)
    with pytest.raises(DomainError):
        log_prior_density(spec, np.zeros(len(idx) + 1))


def test_log_prior_p2_matches_gaussian_variances():
    spec = PExpPriorSpec(2.0, 2.0, 100.0, 1, J=3)
    v = np.random.default_rng(0).standard_normal(len(spec.indices()))
    assert log_prior_density(spec, v) == pytest.approx(-0.5 * np.sum(v**2 / spec.variances()), rel=1e-13)


@given(st.floats(1.0, 2.0), st.integers(0, 10_000))
def test_log_prior_concave(p, seed):
    spec = PExpPriorSpec(p, 3.0, 50.0, 1, J=2)
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, len(spec.indices())))
    mid = log_prior_density(spec, 0.5 * (a + b))
    assert mid >= 0.5 * (log_prior_density(spec, a) + log_prior_density(spec, b)) - 1e-9 * (1 + abs(mid))


def test_prior_draw_json_round_trip():
    P = sample_gaussian_prior(GaussianPriorSpec(MATERN, 2.0, 10.0, 1), make_rng(12))
    back = CoefficientVector.from_json(P.coeffs.to_json())
    assert np.array_equal(synthesize_grid(back.desc, back), P.values)
