"""Incompressible two-fluid Navier-Stokes-Fourier-Maxwell solver with the
first-order Ohm current on the periodic torus.

State variables are divergence-free velocity modes u, temperature theta,
and the electromagnetic pair (E, B); the charge n = div E is derived, so
the Gauss law holds exactly and the charge law is an identity of the
scheme.  Time stepping is Crank-Nicolson on the per-mode linear
Stokes-Maxwell-Ohm block composed with an explicit midpoint treatment of
the dealiased nonlinear terms.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import spectral as sp
from .errors import ConfigurationError, DivergenceError, StepSizeError


@dataclass
class FluidParams:
    mu: float
    kappa: float
    sigma: float
    dt: float
    t_end: float = 1.0
    dealias: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if min(self.mu, self.kappa, self.sigma) <= 0:
            raise ConfigurationError("transport coefficients must be positive")

    def check_cfl(self, grid):
        bound = 0.5 / grid.kmax     # unit-speed Maxwell waves, spectral
        if self.dt > bound:
            raise StepSizeError(
                f"dt = {self.dt} exceeds 0.5/k_max = {bound:.3e}")


@dataclass
class FluidState:
    grid: sp.SpectralGrid
    u_hat: np.ndarray            # (3, *dims), k.u = 0
    theta_hat: np.ndarray        # (*dims)
    E_hat: np.ndarray            # (3, *dims)
    B_hat: np.ndarray            # (3, *dims), k.B = 0, B(0) = 0
    t: float = 0.0
    charge_residual: float = 0.0

    @property
    def n_hat(self):
        """Charge density, derived: n = div E."""
        return self.grid.div(self.E_hat)

    def copy(self):
        return FluidState(grid=self.grid, u_hat=self.u_hat.copy(),
                          theta_hat=self.theta_hat.copy(),
                          E_hat=self.E_hat.copy(), B_hat=self.B_hat.copy(),
                          t=self.t, charge_residual=self.charge_residual)


def make_state(grid, u_hat=None, theta_hat=None, E_hat=None, B_hat=None,
               t=0.0):
    """Build a state, projecting u and B onto their constraint sets."""
    zs = lambda: np.zeros(grid.dims, dtype=complex)
    zv = lambda: np.zeros((3,) + grid.dims, dtype=complex)
    u_hat = zv() if u_hat is None else grid.leray(np.asarray(u_hat, complex))
    B_hat = zv() if B_hat is None else grid.leray(np.asarray(B_hat, complex))
    B_hat[(slice(None),) + (0,) * grid.d] = 0.0
    theta_hat = zs() if theta_hat is None else np.asarray(theta_hat, complex)
    E_hat = zv() if E_hat is None else np.asarray(E_hat, complex)
    return FluidState(grid=grid, u_hat=u_hat, theta_hat=theta_hat,
                      E_hat=E_hat, B_hat=B_hat, t=t)


def taylor_green(grid, amplitude=1.0):
    """Single-mode divergence-free vortex on T^2 (|k|^2 = 2)."""
    x, y = grid.x[0], grid.x[1]
    u = np.zeros((3,) + grid.dims)
    u[0] = amplitude * np.sin(x) * np.cos(y)
    u[1] = -amplitude * np.cos(x) * np.sin(y)
    return make_state(grid, u_hat=np.stack([grid.fft(u[i]) for i in range(3)]))


def random_state(grid, rng, amplitude=1e-2, kmax=4):
    u = grid.random_real_field(rng, (3,), kmax, amplitude)
    B = grid.random_real_field(rng, (3,), kmax, amplitude)
    E = grid.random_real_field(rng, (3,), kmax, amplitude)
    th = grid.random_real_field(rng, (), kmax, amplitude)
    return make_state(grid, u_hat=u, theta_hat=th, E_hat=E, B_hat=B)


# ---------------------------------------------------------------------------
# Ohm current and nonlinear terms


def ohm_current(state, sigma, dealias=True):
    """j = n u + sigma(-grad n / 2 + E + u x B), dealiased mode field."""
    g = state.grid
    n_hat = state.n_hat
    uxB = sp.cross_hat(g, state.u_hat, state.B_hat)
    nu = sp.scalar_mult_hat(g, n_hat, state.u_hat)
    return nu + sigma * (-0.5 * g.grad(n_hat) + state.E_hat + uxB)


def _nonlinear(state, params):
    """Explicit parts: returns (N_u, N_theta, N_E)."""
    g = state.grid
    n_hat = state.n_hat
    adv_u = sp.convect_hat(g, state.u_hat, state.u_hat)
    nE = sp.scalar_mult_hat(g, n_hat, state.E_hat)
    j = ohm_current(state, params.sigma)
    jxB = sp.cross_hat(g, j, state.B_hat)
    N_u = g.leray(-adv_u + 0.5 * nE + 0.5 * jxB)
    N_th = -sp.convect_hat(g, state.u_hat, state.theta_hat)
    uxB = sp.cross_hat(g, state.u_hat, state.B_hat)
    nu = sp.scalar_mult_hat(g, n_hat, state.u_hat)
    N_E = -(nu + params.sigma * uxB)
    return N_u, N_th, N_E


# ---------------------------------------------------------------------------
# Crank-Nicolson per-mode linear solve


_EPS = np.zeros((3, 3, 3))
for _i, _j, _k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
    _EPS[_i, _j, _k] = 1.0
    _EPS[_i, _k, _j] = -1.0


def _maxwell_block(grid, sigma):
    """Per-mode linear generator on (E, B) stacked as 6 components:
    E' = i k x B - sigma E - sigma/2 k (k.E),  B' = -i k x E."""
    k = grid.k.reshape(3, -1).T                     # (modes, 3)
    m = k.shape[0]
    A = np.zeros((m, 6, 6), dtype=complex)
    for a in range(3):
        for b in range(3):
            A[:, a, b] = -sigma * (1.0 if a == b else 0.0) \
                - 0.5 * sigma * k[:, a] * k[:, b]
            for c in range(3):
                if _EPS[a, c, b]:
                    A[:, a, 3 + b] += 1j * _EPS[a, c, b] * k[:, c]
                    A[:, 3 + a, b] -= 1j * _EPS[a, c, b] * k[:, c]
    return A


class StepperCache:
    """Cached CN factors for a (grid, params) pair."""

    def __init__(self, grid, params):
        self.grid = grid
        self.params = params
        dt = params.dt
        A = _maxwell_block(grid, params.sigma)
        eye = np.eye(6)
        self.solve_full = np.linalg.inv(eye[None] - 0.5 * dt * A)
        self.rhs_full = eye[None] + 0.5 * dt * A
        self.solve_half = np.linalg.inv(eye[None] - 0.25 * dt * A)
        self.rhs_half = eye[None] + 0.25 * dt * A
        ksq = grid.ksq.ravel()
        self.u_solve_full = (1.0 - 0.5 * dt * params.mu * ksq,
                             1.0 / (1.0 + 0.5 * dt * params.mu * ksq))
        self.u_solve_half = (1.0 - 0.25 * dt * params.mu * ksq,
                             1.0 / (1.0 + 0.25 * dt * params.mu * ksq))
        self.th_solve_full = (1.0 - 0.5 * dt * params.kappa * ksq,
                              1.0 / (1.0 + 0.5 * dt * params.kappa * ksq))
        self.th_solve_half = (1.0 - 0.25 * dt * params.kappa * ksq,
                              1.0 / (1.0 + 0.25 * dt * params.kappa * ksq))


def _cn_apply(cache, state, N_u, N_th, N_E, half):
    """One CN update y -> Minv[(I + dtA/2) y + dt N]."""
    g = state.grid
    dt = cache.params.dt * (0.5 if half else 1.0)
    shape = g.dims
    m = int(np.prod(shape))
    EB = np.concatenate([state.E_hat.reshape(3, m),
                         state.B_hat.reshape(3, m)], axis=0).T  # (m, 6)
    NE = np.concatenate([N_E.reshape(3, m),
                         np.zeros((3, m), complex)], axis=0).T
    rhs_mat = cache.rhs_half if half else cache.rhs_full
    sol_mat = cache.solve_half if half else cache.solve_full
    EBn = np.einsum("mij,mj->mi", sol_mat,
                    np.einsum("mij,mj->mi", rhs_mat, EB) + dt * NE)
    E_new = EBn[:, :3].T.reshape((3,) + shape)
    B_new = EBn[:, 3:].T.reshape((3,) + shape)
    num, den = cache.u_solve_half if half else cache.u_solve_full
    u_new = ((num * state.u_hat.reshape(3, m) + dt * N_u.reshape(3, m)) * den) \
        .reshape((3,) + shape)
    num, den = cache.th_solve_half if half else cache.th_solve_full
    th_new = ((num * state.theta_hat.ravel() + dt * N_th.ravel()) * den) \
        .reshape(shape)
    return FluidState(grid=g, u_hat=u_new, theta_hat=th_new, E_hat=E_new,
                      B_hat=B_new, t=state.t + dt)


def step_nsfm(state, params, cache=None):
    """Advance one time step; preserves the divergence constraints.

    IMEX midpoint: a half CN step with frozen nonlinearity predicts the
    midpoint, whose nonlinear terms drive the full CN step.
    """
    if cache is None:
        cache = StepperCache(state.grid, params)
        params.check_cfl(state.grid)
    N0 = _nonlinear(state, params)
    mid = _cn_apply(cache, state, *N0, half=True)
    N1 = _nonlinear(mid, params)
    new = _cn_apply(cache, state, *N1, half=False)
    if not np.all(np.isfinite(new.u_hat)) or not np.all(np.isfinite(new.E_hat)):
        raise DivergenceError(f"NaN detected at t = {new.t}")
    # scheme-identity charge residual: j_eff = -(dE/dt) + curl(B_avg)
    g = state.grid
    dt = params.dt
    j_eff = -(new.E_hat - state.E_hat) / dt \
        + g.curl(0.5 * (new.B_hat + state.B_hat))
    res = g.div(j_eff) + (g.div(new.E_hat) - g.div(state.E_hat)) / dt
    new.charge_residual = float(np.max(np.abs(res)))
    return new


def run_nsfm(state, params, n_steps=None, monitor=None):
    cache = StepperCache(state.grid, params)
    params.check_cfl(state.grid)
    if n_steps is None:
        n_steps = int(round((params.t_end - state.t) / params.dt))
    for _ in range(n_steps):
        state = step_nsfm(state, params, cache)
        if monitor is not None:
            monitor(state)
    return state


# ---------------------------------------------------------------------------
# Diagnostics


def fluid_diagnostics(state, s, params_or_sigma):
    """Energy/dissipation functionals and constraint defects.

    delta = min(1, sigma)/2; dB/dt is evaluated spectrally as -curl E.
    """
    g = state.grid
    if hasattr(params_or_sigma, "sigma"):
        sigma = params_or_sigma.sigma
        mu = params_or_sigma.mu
        kappa = params_or_sigma.kappa
    else:
        sigma = float(params_or_sigma)
        mu = kappa = None
    delta = 0.5 * min(1.0, sigma)
    n_hat = state.n_hat
    dtB = -g.curl(state.E_hat)
    gradB_sq = sum(g.hs_sq(1j * g.k[i] * state.B_hat, s) for i in range(3))
    E0s = (g.hs_sq(state.u_hat, s) + g.hs_sq(state.theta_hat, s)
           + 1.5 * g.hs_sq(state.E_hat, s) + 1.25 * g.hs_sq(n_hat, s)
           + (1.5 - delta + delta * sigma) * g.hs_sq(state.B_hat, s)
           + (1.0 - delta) * g.hs_sq(dtB, s)
           + gradB_sq
           + delta * g.hs_sq(dtB + state.B_hat, s))
    out = {"E0s": E0s,
           "charge_residual": state.charge_residual,
           "divB_max": float(np.max(np.abs(g.div(state.B_hat)))),
           "meanB_max": float(np.max(np.abs(
               state.B_hat[(slice(None),) + (0,) * g.d])))}
    if mu is not None:
        gradu_sq = sum(g.hs_sq(1j * g.k[i] * state.u_hat, s) for i in range(3))
        gradn_sq = sum(g.hs_sq(1j * g.k[i] * n_hat, s) for i in range(3))
        ohm_term = 0.0
        B_r = np.stack([g.ifft(state.B_hat[i]) for i in range(3)])
        for m in sp.multi_indices_upto(s, g.d):
            dm = np.ones(g.dims, dtype=complex)
            for i, mi in enumerate(m):
                dm = dm * (1j * g.k[i]) ** mi
            dmu = np.stack([g.ifft(dm * state.u_hat[i]) for i in range(3)])
            duxB = np.stack([g.fft(f) for f in np.cross(dmu, B_r, axis=0)])
            combo = -0.5 * g.grad(dm * n_hat) + dm * state.E_hat + duxB
            ohm_term += g.l2sq(combo)
        D0s = (mu * gradu_sq + 0.5 * kappa * g.hs_sq(state.theta_hat, s)
               + sigma * g.hs_sq(state.E_hat, s) + 1.5 * sigma * g.hs_sq(n_hat, s)
               + 0.5 * sigma * gradn_sq
               + (sigma - delta) * g.hs_sq(dtB, s)
               + delta * gradB_sq
               + 0.5 * sigma * ohm_term)
        out["D0s"] = D0s
    return out
