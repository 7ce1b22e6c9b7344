import struct

import numpy as np
import pytest

from revdiff.basis import BasisDescriptor, CoefficientVector, FourierIndex
from revdiff.diffusion import Potential, invariant_density
from revdiff.errors import DomainError, SimulationError
from revdiff.sde import (
    PathRecord,
    SimConfig,
    _em_grid,
    brownian_increments,
    ergodic_average,
    integrate_increments,
    ito_integral,
    make_rng,
    quadratic_variation,
    read_path,
    refine_increments,
    simulate,
    time_integral,
    write_path,
)

ZERO = Potential.zero(BasisDescriptor.fourier(1, 1))


def cos_potential(a=0.5):
    return Potential.from_dict(BasisDescriptor.fourier(1, 1), {FourierIndex((1,), "cos"): a})


def endpoints(P, T, dt, n, seed=0):
    return np.array([simulate(P, SimConfig(T=T, dt=dt, seed=seed, stream=r)).positions[-1, 0] for r in range(n)])


# -- configuration --------------------------------------------------------------


def test_sim_config_validation():
    with pytest.raises(DomainError):
        SimConfig(T=1.0, dt=0.0)
    with pytest.raises(DomainError):
        SimConfig(T=1e-4, dt=1e-3)
    with pytest.raises(DomainError):
        SimConfig(T=1e7, dt=1e-3)
    assert SimConfig(T=2.5, dt=0.5).n_steps == 5


def test_path_length_and_unwrapped():
    path = simulate(cos_potential(), SimConfig(T=20.0, dt=1e-3, seed=4))
    assert path.n_points == 20001
    assert abs(path.T - 20.0) < 1e-9
    assert np.max(np.abs(path.positions)) > 1.0  # not reduced modulo 1


def test_simulate_deterministic():
    P = cos_potential()
    cfg = SimConfig(T=5.0, seed=11)
    a, b = simulate(P, cfg), simulate(P, cfg)
    assert np.array_equal(a.positions, b.positions)
    c = simulate(P, SimConfig(T=5.0, seed=11, stream=1))
    assert not np.array_equal(a.positions, c.positions)


def test_burn_in_discarded():
    P = cos_potential()
    path = simulate(P, SimConfig(T=1.0, seed=2, burn_in=0.5, x0=(0.0,)))
    assert path.n_points == 1001 and path.positions[0, 0] != 0.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reports_step():
    P = Potential.from_dict(BasisDescriptor.fourier(1, 1), {FourierIndex((1,), "sin"): 1e308})
    with pytest.raises(SimulationError) as info:
        simulate(P, SimConfig(T=1.0, seed=0, x0=(0.1,)))
    assert info.value.step is not None and info.value.step >= 1


# -- Brownian sanity ----------------------------------------------------------------


def test_driftless_mean():
    T = 1.0
    x = endpoints(ZERO, T, 1e-3, 500)
    assert abs(x.mean()) <= 3 * np.sqrt(T / 500)


def test_driftless_variance():
    x = endpoints(ZERO, 10.0, 1e-3, 2000, seed=1)
    assert abs(x.var(ddof=1) / 10.0 - 1.0) <= 0.1


@pytest.mark.parametrize("P", [cos_potential(0.8), Potential.zero(BasisDescriptor.fourier(2, 1))])
def test_quadratic_variation(P):
    path = simulate(P, SimConfig(T=50.0, dt=1e-3, x0=(0.0,) * P.d, seed=3))
    qv = quadratic_variation(path) / (P.d * path.T)
    assert 0.95 <= qv <= 1.05


def test_grid_kernel_matches_exact_drift():
    P = cos_potential(0.6)
    cfg = SimConfig(T=5.0, dt=1e-3, seed=5)
    dW = brownian_increments(cfg)
    exact = integrate_increments(P, (0.0,), cfg.dt, dW)
    interp = _em_grid(np.zeros(1), cfg.dt, np.ascontiguousarray(P.grad.reshape(1, -1)), P.desc.grid_size, dW)
    assert np.max(np.abs(exact - interp)) < 1e-4


def test_wavelet_potential_simulates():
    desc = BasisDescriptor.wavelets(2, 1)
    idx = desc.indices(constant=False)
    P = Potential(CoefficientVector(desc, idx, 0.1 * np.random.default_rng(0).standard_normal(len(idx))))
    path = simulate(P, SimConfig(T=10.0, x0=(0.2, 0.4), seed=1))
    assert path.d == 2 and np.all(np.isfinite(path.positions))


# -- functionals ------------------------------------------------------------------


def test_time_integral_constants():
    path = simulate(cos_potential(), SimConfig(T=3.0, seed=0))
    assert abs(time_integral(path, lambda x: np.ones(len(x))) - 3.0) <= path.dt
    assert time_integral(path, lambda x: np.zeros(len(x))) == 0.0
    assert abs(ergodic_average(path, lambda x: np.ones(len(x))) - 1.0) <= path.dt / path.T


def test_ito_integral_zero_field():
    path = simulate(cos_potential(), SimConfig(T=3.0, seed=0))
    assert ito_integral(path, lambda x: np.zeros_like(x)) == 0.0


def test_ito_isometry_constant_field():
    vals = [ito_integral(simulate(ZERO, SimConfig(T=10.0, seed=9, stream=r)), lambda x: np.ones_like(x)) for r in range(1000)]
    assert abs(np.var(vals, ddof=1) / 10.0 - 1.0) <= 0.1


def test_ito_formula_oracle():
    # g = h' with h = sqrt2 cos(2 pi x); Ito: int h'(X) dX = h(X_T) - h(X_0) - 1/2 int h''(X) ds
    h = lambda x: np.sqrt(2) * np.cos(2 * np.pi * x[:, 0])  # noqa: E731
    dh = lambda x: -np.sqrt(2) * 2 * np.pi * np.sin(2 * np.pi * x)  # noqa: E731
    d2h = lambda x: -np.sqrt(2) * 4 * np.pi**2 * np.cos(2 * np.pi * x[:, 0])  # noqa: E731
    T, dt = 1.0, 4e-3
    gaps = {dt: [], dt / 4: []}
    for r in range(200):
        rng = make_rng(21, r)
        dW = np.sqrt(dt) * rng.standard_normal((int(T / dt), 1))
        for step, inc in ((dt, dW), (dt / 4, refine_increments(refine_increments(dW, dt, rng), dt / 2, rng))):
            path = PathRecord(step, integrate_increments(ZERO, (0.0,), step, inc))
            X = np.mod(path.positions[[0, -1]], 1.0)
            rhs = h(X[1:]) - h(X[:1]) - 0.5 * time_integral(path, d2h)
            gaps[step].append(float(ito_integral(path, dh) - rhs[0]))
    coarse = np.sqrt(np.mean(np.square(gaps[dt])))
    fine = np.sqrt(np.mean(np.square(gaps[dt / 4])))
    # leading gap term 1/2 sum h''(X)(dX^2 - dt) has variance T dt E[h''^2] / 2, E[h''^2] = 16 pi^4
    predicted = np.sqrt(0.5 * T * dt * 16 * np.pi**4)
    assert abs(coarse / predicted - 1.0) < 0.25
    # strong error of the left-point sum scales like sqrt(dt)
    assert fine < 0.65 * coarse


def test_driftless_ergodic_average_of_cosine():
    path = simulate(ZERO, SimConfig(T=500.0, seed=8))
    assert abs(ergodic_average(path, lambda x: np.cos(2 * np.pi * x[:, 0]))) <= 0.05


def _bump(x):
    return np.exp(-((np.mod(x[:, 0] - 0.5, 1.0) - 0.5) ** 2) / 0.02)


def test_ergodic_average_matches_invariant_density():
    P = cos_potential(0.5)
    mu = invariant_density(P).values
    target = np.mean(_bump(P.desc.grid_points()) * mu)
    avg = ergodic_average(simulate(P, SimConfig(T=1000.0, seed=12)), _bump)
    assert abs(avg - target) <= 0.05


def test_ergodic_error_shrinks_with_horizon():
    P = cos_potential(0.5)
    mu = invariant_density(P).values
    phi = lambda x: np.sin(2 * np.pi * x[:, 0]) + np.cos(2 * np.pi * x[:, 0])  # noqa: E731
    target = np.mean(phi(P.desc.grid_points()) * mu)
    err = {}
    for T in (100.0, 1000.0):
        err[T] = np.mean([abs(ergodic_average(simulate(P, SimConfig(T=T, seed=30, stream=s)), phi) - target) for s in range(20)])
    assert err[1000.0] < err[100.0]


def test_refinement_stability():
    P = cos_potential(0.5)
    f = lambda x: np.cos(2 * np.pi * x[:, 0]) ** 2  # noqa: E731
    T, dt = 10.0, 1e-2
    d1, d2 = [], []
    for s in range(10):
        rng = make_rng(40, s)
        dW = np.sqrt(dt) * rng.standard_normal((int(T / dt), 1))
        dW2 = refine_increments(dW, dt, rng)
        dW4 = refine_increments(dW2, dt / 2, rng)
        vals = [
            time_integral(PathRecord(step, integrate_increments(P, (0.0,), step, inc)), f)
            for step, inc in ((dt, dW), (dt / 2, dW2), (dt / 4, dW4))
        ]
        d1.append(abs(vals[0] - vals[1]))
        d2.append(abs(vals[1] - vals[2]))
    assert np.mean(d1) <= 10 * T * dt
    assert np.mean(d2) < 0.75 * np.mean(d1)


def test_bridge_preserves_increments():
    dW = np.random.default_rng(0).standard_normal((100, 2))
    fine = refine_increments(dW, 1.0, np.random.default_rng(1))
    assert np.allclose(fine[0::2] + fine[1::2], dW, atol=1e-14)


# -- TDF1 files ------------------------------------------------------------------------


def test_tdf1_round_trip_and_layout(tmp_path):
    P = Potential.zero(BasisDescriptor.fourier(2, 1))
    path = simulate(P, SimConfig(T=0.5, dt=0.01, x0=(0.25, 0.5), seed=77))
    target = tmp_path / "p.tdf"
    write_path(path, target)
    raw = target.read_bytes()
    assert raw[:4] == b"TDF1"
    d, dt, n = struct.unpack_from("<IdQ", raw, 4)
    assert (d, dt, n) == (2, 0.01, 51)
    assert struct.unpack_from("<2d", raw, 24) == (0.25, 0.5)
    assert struct.unpack_from("<Q", raw, 40)[0] == 77
    assert len(raw) == 48 + 8 * n * d
    back = read_path(target)
    assert np.array_equal(back.positions, path.positions) and back.seed == 77 and back.dt == 0.01


def test_tdf1_bad_magic(tmp_path):
    target = tmp_path / "bad.tdf"
    target.write_bytes(b"XXXX" + bytes(60))
    with pytest.raises(DomainError):
        read_path(target)
