"""First-order corrector fields.

Poisson solves fix the curl-free velocity correction u1 = grad(phi) with
Laplace phi = d theta0/dt and the density/temperature correction
rho1 = theta1 (both mean free); the electromagnetic pair (E1, B1) obeys a
linear Maxwell-type system driven by the first-order Ohm current j1, whose
stiff parts sigma E1 and -sigma grad(n1)/2 are integrated implicitly
(Crank-Nicolson, same per-mode block as the fluid solver) while the rest
(j1-tilde) is treated by explicit midpoint.  The system is one-way coupled:
the fluid trajectory drives the corrector.
"""

from dataclasses import dataclass

import numpy as np

from . import fluid as fl
from . import spectral as sp
from .errors import DivergenceError, SolvabilityError


@dataclass
class CorrectorState:
    grid: sp.SpectralGrid
    E1_hat: np.ndarray             # (3, *dims)
    B1_hat: np.ndarray             # (3, *dims), div-free, mean-free
    t: float = 0.0

    @property
    def n1_hat(self):
        return self.grid.div(self.E1_hat)

    def copy(self):
        return CorrectorState(grid=self.grid, E1_hat=self.E1_hat.copy(),
                              B1_hat=self.B1_hat.copy(), t=self.t)


def make_corrector(grid, E1_hat=None, B1_hat=None, t=0.0):
    zv = lambda: np.zeros((3,) + grid.dims, dtype=complex)
    E1 = zv() if E1_hat is None else np.asarray(E1_hat, complex)
    B1 = zv() if B1_hat is None else grid.leray(np.asarray(B1_hat, complex))
    if B1_hat is not None:
        B1[(slice(None),) + (0,) * grid.d] = 0.0
    return CorrectorState(grid=grid, E1_hat=E1, B1_hat=B1, t=t)


def theta0_dot(fluid_state, coeffs):
    """d theta0/dt from the temperature equation (analytic, dealiased)."""
    g = fluid_state.grid
    adv = sp.convect_hat(g, fluid_state.u_hat, fluid_state.theta_hat)
    return coeffs.kappa * g.laplacian(fluid_state.theta_hat) - adv


def solve_corrector_scalars(fluid_state, coeffs, mean_tol=1e-10):
    """(phi, u1, rho1 = theta1) from the two torus Poisson problems."""
    g = fluid_state.grid
    thdot = theta0_dot(fluid_state, coeffs)
    zmode = (0,) * g.d
    scale = max(float(np.max(np.abs(thdot))), 1e-300)
    if abs(thdot[zmode]) > mean_tol * max(scale, 1.0):
        raise SolvabilityError(
            f"d theta0/dt has nonzero mean {abs(thdot[zmode]):.3e}")
    thdot = thdot.copy()
    thdot[zmode] = 0.0
    phi = g.poisson_mean_free(thdot)
    u1 = g.grad(phi)
    # Laplace rho1 = Laplace|u0|^2/6 - div(u0.grad u0 - n0 E0/2 - j0 x B0/2)/2
    u0r = np.stack([g.ifft(fluid_state.u_hat[i]) for i in range(3)])
    usq_hat = g.dealias(g.fft(np.sum(u0r**2, axis=0)))
    adv = sp.convect_hat(g, fluid_state.u_hat, fluid_state.u_hat)
    nE = sp.scalar_mult_hat(g, fluid_state.n_hat, fluid_state.E_hat)
    j0 = fl.ohm_current(fluid_state, coeffs.sigma)
    jxB = sp.cross_hat(g, j0, fluid_state.B_hat)
    rhs = (g.laplacian(usq_hat) / 6.0
           - 0.5 * g.div(adv - 0.5 * nE - 0.5 * jxB))
    rhs[zmode] = 0.0
    rho1 = g.poisson_mean_free(rhs)
    return phi, u1, rho1


def step_linear_maxwell(corr, params, j_tilde_fn, fluid_now, fluid_mid,
                        cache=None):
    """One IMEX step of the corrector Maxwell system.

    j_tilde_fn(corr_state, fluid_state) returns the explicit current modes.
    fluid_now / fluid_mid are the driving fluid states at t and t + dt/2.
    """
    g = corr.grid
    if cache is None:
        cache = fl.StepperCache(g, params)
        params.check_cfl(g)
    dt = params.dt

    def cn(state, N_E, half):
        dth = dt * (0.5 if half else 1.0)
        m = int(np.prod(g.dims))
        EB = np.concatenate([state.E1_hat.reshape(3, m),
                             state.B1_hat.reshape(3, m)], axis=0).T
        NE = np.concatenate([N_E.reshape(3, m), np.zeros((3, m), complex)],
                            axis=0).T
        rhs = cache.rhs_half if half else cache.rhs_full
        sol = cache.solve_half if half else cache.solve_full
        EBn = np.einsum("mij,mj->mi", sol,
                        np.einsum("mij,mj->mi", rhs, EB) + dth * NE)
        return CorrectorState(
            grid=g, E1_hat=EBn[:, :3].T.reshape((3,) + g.dims),
            B1_hat=EBn[:, 3:].T.reshape((3,) + g.dims), t=state.t + dth)

    N0 = -j_tilde_fn(corr, fluid_now)
    mid = cn(corr, N0, half=True)
    N1 = -j_tilde_fn(mid, fluid_mid)
    new = cn(corr, N1, half=False)
    if not np.all(np.isfinite(new.E1_hat)):
        raise DivergenceError(f"NaN in corrector fields at t = {new.t}")
    return new


def corrector_diagnostics(corr, M, sigma, u1_hat=None, history=None,
                          j_tilde_hat=None):
    """E1M/D1M functionals, constraint defects, damped-wave residual.

    history = (B1_prev, B1_next, dt) enables the second-difference residual
    of  d2B/dt2 - Laplace B + sigma dB/dt = curl(j1-tilde).
    """
    g = corr.grid
    delta = 0.5 * min(1.0, sigma)
    n1 = corr.n1_hat
    dtB = -g.curl(corr.E1_hat)
    gradB_sq = sum(g.hs_sq(1j * g.k[i] * corr.B1_hat, M) for i in range(3))
    E1M = (g.hs_sq(corr.E1_hat, M) + g.hs_sq(n1, M)
           + (1.0 - delta + delta * sigma) * g.hs_sq(corr.B1_hat, M)
           + gradB_sq + (1.0 - delta) * g.hs_sq(dtB, M)
           + delta * g.hs_sq(dtB + corr.B1_hat, M))
    gradn_sq = sum(g.hs_sq(1j * g.k[i] * n1, M) for i in range(3))
    D1M = (0.5 * sigma * g.hs_sq(corr.E1_hat, M)
           + 0.75 * sigma * g.hs_sq(n1, M)
           + 0.25 * sigma * gradn_sq
           + 0.5 * delta * gradB_sq
           + 0.5 * (sigma - delta) * g.hs_sq(dtB, M))
    if u1_hat is not None:
        D1M += 0.5 * sum(g.hs_sq(1j * g.k[i] * u1_hat, M) for i in range(3))
    out = {"E1M": E1M, "D1M": D1M,
           "divB1_max": float(np.max(np.abs(g.div(corr.B1_hat)))),
           "meanB1_max": float(np.max(np.abs(
               corr.B1_hat[(slice(None),) + (0,) * g.d])))}
    if history is not None:
        B_prev, B_next, dt = history
        d2B = (B_next - 2.0 * corr.B1_hat + B_prev) / dt**2
        d1B = (B_next - B_prev) / (2.0 * dt)
        resid = d2B - g.laplacian(corr.B1_hat) + sigma * d1B
        if j_tilde_hat is not None:
            resid = resid - g.curl(j_tilde_hat)
        out["damped_wave_residual"] = float(np.sqrt(g.l2sq(resid)))
    return out


def damped_wave_roots(sigma, ksq):
    """Roots of s^2 + sigma s + |k|^2 = 0 (as complex numbers)."""
    disc = sigma**2 - 4.0 * ksq
    sq = np.sqrt(complex(disc))
    return (-sigma + sq) / 2.0, (-sigma - sq) / 2.0


def free_decay_solution(sigma, ksq, t, b0=1.0, db0=0.0):
    """Analytic transverse B-mode under the force-free damped wave."""
    s1, s2 = damped_wave_roots(sigma, ksq)
    if abs(s1 - s2) < 1e-12:
        return (b0 + (db0 - s1 * b0) * t) * np.exp(s1 * t)
    c2 = (db0 - s1 * b0) / (s2 - s1)
    c1 = b0 - c2
    return c1 * np.exp(s1 * t) + c2 * np.exp(s2 * t)
