"""Boltzmann collision operator with hard-potential cutoff kernel.

Two routes to the linearized two-species operator:

* via_Q: Galerkin weak form of the bilinear operator evaluated in rotated
  pair coordinates p = (v+v*)/sqrt2, q = (v-v*)/sqrt2 with a generalized
  Gauss rule for the radial weight r^(2+gamma) e^(-r^2/2), so the quadrature
  is exact for the polynomial integrands at gamma in {0, 1}.
* via_kernels: the split 2 nu(v) I - K1 + K2 with the gain kernels reduced
  to closed planar/radial integrals (Grad-style), evaluated in spherical
  coordinates centered at the outer velocity so the 1/|v-v*|^2 factor and
  the Gaussian ridge are removed analytically.

The collision rule is the energy/momentum conserving deflection
v' = v - [(v-v*).w] w, v*' = v* + [(v-v*).w] w for w on the unit sphere,
with constant angular density bhat = 1/(4 pi) normalized so the sphere
integral of bhat is 1.
"""

import os
from dataclasses import dataclass, field
from functools import lru_cache

import mpmath as mp
import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import i0e

from . import io_utils
from . import velocity as vel
from .errors import (AssemblyInconsistencyError, ConfigurationError,
                     DiagnosticError, ShapeError, StateError)


@dataclass(frozen=True)
class KernelConfig:
    """Hard-potential cutoff kernel |v-v*|^gamma bhat."""

    gamma: float = 0.0
    bhat: float = 1.0 / (4.0 * np.pi)
    sigma_polar: int = 8
    sigma_azimuth: int = 15

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigurationError(f"gamma must be in [0,1], got {self.gamma}")
        if self.sigma_polar < 2 or self.sigma_azimuth < 3:
            raise ConfigurationError("angular rule underresolved")


def angular_rule(n_polar, n_azimuth):
    """Product rule on S^2: Gauss-Legendre in cos(theta) x uniform azimuth.

    Weights sum to 4 pi; exact for spherical polynomials of degree
    min(2 n_polar - 1, n_azimuth - 1).
    """
    c, wc = leggauss(n_polar)
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    wphi = 2.0 * np.pi / n_azimuth
    s = np.sqrt(1.0 - c**2)
    nodes = np.empty((n_polar * n_azimuth, 3))
    nodes[:, 0] = np.outer(s, np.cos(phi)).ravel()
    nodes[:, 1] = np.outer(s, np.sin(phi)).ravel()
    nodes[:, 2] = np.outer(c, np.ones(n_azimuth)).ravel()
    weights = np.outer(wc, np.full(n_azimuth, wphi)).ravel()
    return nodes, weights


def angular_normalization(cfg):
    """Quadrature value of the sphere integral of bhat (should be 1)."""
    _, w = angular_rule(cfg.sigma_polar, cfg.sigma_azimuth)
    return cfg.bhat * w.sum()


def collide(v, vstar, omega):
    """Post-collision velocities for deflection direction omega."""
    a = np.sum((v - vstar) * omega, axis=-1, keepdims=True)
    return v - a * omega, vstar + a * omega


@lru_cache(maxsize=None)
def radial_rule(gamma, n):
    """Gauss rule for int_0^inf r^(2+gamma) e^(-r^2/2) f(r) dr.

    Built by the Chebyshev algorithm from exact moments
    m_k = 2^((k+1+gamma)/2) Gamma((k+3+gamma)/2) in 80-digit arithmetic.
    """
    with mp.workdps(80):
        g = mp.mpf(gamma)
        moms = [mp.mpf(2) ** ((k + 1 + g) / 2) * mp.gamma((k + 3 + g) / 2)
                for k in range(2 * n)]
        alpha = [mp.mpf(0)] * n
        beta = [mp.mpf(0)] * n
        sig_prev = [mp.mpf(0)] * (2 * n + 1)
        sig = list(moms) + [mp.mpf(0)]
        alpha[0] = moms[1] / moms[0]
        beta[0] = moms[0]
        for k in range(1, n):
            sig_new = [mp.mpf(0)] * (2 * n + 1)
            for l in range(k, 2 * n - k):
                sig_new[l] = (sig[l + 1] - alpha[k - 1] * sig[l]
                              - beta[k - 1] * sig_prev[l])
            alpha[k] = (sig_new[k + 1] / sig_new[k]) - (sig[k] / sig[k - 1])
            beta[k] = sig_new[k] / sig[k - 1]
            sig_prev, sig = sig, sig_new
        J = mp.zeros(n, n)
        for i in range(n):
            J[i, i] = alpha[i]
        for i in range(n - 1):
            off = mp.sqrt(beta[i + 1])
            J[i, i + 1] = off
            J[i + 1, i] = off
        evals, evecs = mp.eigsy(J)
        nodes = np.array([float(evals[i]) for i in range(n)])
        w0 = np.array([float(evecs[0, i]) ** 2 for i in range(n)])
        weights = w0 * float(beta[0])
    order = np.argsort(nodes)
    nodes, weights = nodes[order], weights[order]
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def composite_gl(a, b, panels, per_panel):
    """Composite Gauss-Legendre nodes/weights on [a, b]."""
    x, w = leggauss(per_panel)
    edges = np.linspace(a, b, panels + 1)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        h = 0.5 * (hi - lo)
        nodes.append(lo + h * (x + 1.0))
        weights.append(h * w)
    return np.concatenate(nodes), np.concatenate(weights)


def collision_frequency(v, cfg):
    """nu(v) = int |v-v*|^gamma M(v*) dv* via a reduced 1-D quadrature.

    Uses the identity e^(-s^2/2)(e^(rs)-e^(-rs)) e^(-r^2/2)
    = e^(-(r-s)^2/2) - e^(-(r+s)^2/2), stable for large |v|.
    """
    v_in = np.asarray(v, dtype=float)
    v = np.atleast_2d(v_in)
    s = np.sqrt(np.sum(v**2, axis=-1))
    g = cfg.gamma
    out = np.empty_like(s)
    smax = float(s.max()) if s.size else 0.0
    r, w = composite_gl(0.0, smax + 14.0, max(8, int(smax / 2) + 8), 16)
    big = s > 1e-10
    if np.any(big):
        sb = s[big][:, None]
        vals = (r**(1.0 + g))[None, :] * (np.exp(-0.5 * (r[None, :] - sb)**2)
                                          - np.exp(-0.5 * (r[None, :] + sb)**2))
        out[big] = (vals @ w) / (np.sqrt(2.0 * np.pi) * s[big])
    if np.any(~big):
        out[~big] = 2.0 * np.sum(r**(2.0 + g) * np.exp(-0.5 * r**2) * w) \
            / np.sqrt(2.0 * np.pi)
    return float(out[0]) if v_in.ndim == 1 else out


# ---------------------------------------------------------------------------
# via_Q: weak-form assembly in rotated pair coordinates


@dataclass
class PairQuadrature:
    """Nodes for int M(v) M(v*) |v-v*|^gamma f(v, v*) dv dv*."""

    p_nodes: np.ndarray
    p_weights: np.ndarray
    r_nodes: np.ndarray
    r_weights: np.ndarray
    qhat_nodes: np.ndarray
    qhat_weights: np.ndarray
    gamma: float

    @property
    def n_pairs(self):
        return (self.p_nodes.shape[0] * self.r_nodes.shape[0]
                * self.qhat_nodes.shape[0])


def pair_quadrature(gamma, deg_pair, p_order=None):
    """Rule exact for polynomials of total degree deg_pair in v and v*."""
    n_gauss = deg_pair // 2 + 1          # 2n-1 >= deg_pair
    if p_order is None:
        p_order = n_gauss
    x, w = vel.gauss_hermite_prob(p_order)
    X = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
    W = np.prod(np.stack(np.meshgrid(w, w, w, indexing="ij"), axis=-1)
                .reshape(-1, 3), axis=1)
    r, wr = radial_rule(float(gamma), n_gauss)
    qhat, wq = angular_rule(n_gauss, deg_pair + 3)
    return PairQuadrature(p_nodes=X, p_weights=W, r_nodes=r, r_weights=wr,
                          qhat_nodes=qhat, qhat_weights=wq, gamma=float(gamma))


def _pair_chunks(pq, max_chunk=200_000):
    """Yield (v, v*, weights) arrays in chunks of pairs."""
    npnt = pq.p_nodes.shape[0]
    block = max(1, max_chunk // npnt)
    const = (2.0 * np.pi) ** (-1.5) * 2.0 ** (0.5 * pq.gamma)
    nq = pq.qhat_nodes.shape[0]
    for ir, (r, wr) in enumerate(zip(pq.r_nodes, pq.r_weights)):
        for j0 in range(0, nq, block):
            qh = pq.qhat_nodes[j0:j0 + block]
            wq = pq.qhat_weights[j0:j0 + block]
            qt = r * qh                                    # (b, 3)
            v = (pq.p_nodes[:, None, :] + qt[None, :, :]) / np.sqrt(2.0)
            vs = (pq.p_nodes[:, None, :] - qt[None, :, :]) / np.sqrt(2.0)
            wgt = const * wr * pq.p_weights[:, None] * wq[None, :]
            yield (v.reshape(-1, 3), vs.reshape(-1, 3), wgt.ravel())


def _gain_minus_loss(vflat, vsflat, D, cfg):
    """R[p, k] = bhat * sum_sigma w_sigma e_k(v') - e_k(v).

    The deflection map is even in omega, so only the upper hemisphere is
    evaluated (doubled weights; equatorial nodes, if any, keep their own).
    """
    omg, womg = angular_rule(cfg.sigma_polar, cfg.sigma_azimuth)
    up = omg[:, 2] > 1e-14
    eq = np.abs(omg[:, 2]) <= 1e-14
    omg = np.concatenate([omg[up], omg[eq]])
    womg = np.concatenate([2.0 * womg[up], womg[eq]])
    R = -vel.evaluate_basis(vflat, D)
    u = vflat - vsflat
    for o, wo in zip(omg, womg):
        a = u @ o
        vp = vflat - a[:, None] * o[None, :]
        R += (cfg.bhat * wo) * vel.evaluate_basis(vp, D)
    return R


def assemble_q_tensor(basis, cfg, pq=None, progress=None):
    """Galerkin tensor Q[i, j, k] = <Q(e_i, e_j) e_k>."""
    D = basis.max_total_degree
    if pq is None:
        pq = pair_quadrature(cfg.gamma, 3 * D)
    nb = basis.n_b
    Q = np.zeros((nb, nb, nb))
    for vflat, vsflat, wgt in _pair_chunks(pq):
        Ei = vel.evaluate_basis(vflat, D)
        Ej = vel.evaluate_basis(vsflat, D)
        R = _gain_minus_loss(vflat, vsflat, D, cfg)
        WR = wgt[:, None] * R
        for k in range(nb):
            Q[:, :, k] += (Ei * WR[:, k:k + 1]).T @ Ej
        if progress:
            progress(vflat.shape[0])
    return Q


def assemble_pair_matrices(basis, cfg, pq=None):
    """Matrices of g -> -Q(g, 1) (A) and h -> -Q(1, h) (B).

    Output convention (M c)_k = coefficient of e_k, i.e. M[k, i].
    """
    D = basis.max_total_degree
    if pq is None:
        pq = pair_quadrature(cfg.gamma, 2 * D)
    nb = basis.n_b
    A = np.zeros((nb, nb))
    B = np.zeros((nb, nb))
    for vflat, vsflat, wgt in _pair_chunks(pq):
        Ei = vel.evaluate_basis(vflat, D)
        Ej = vel.evaluate_basis(vsflat, D)
        R = _gain_minus_loss(vflat, vsflat, D, cfg)
        WR = wgt[:, None] * R
        A -= WR.T @ Ei
        B -= WR.T @ Ej
    return A, B


# ---------------------------------------------------------------------------
# via_kernels: 2 nu I - K1 + K2 from the explicit gain/loss kernels


def _planar_gain_factor(r, s, gamma, n_gh=14):
    """J_B/(2 pi): in-plane Gauss-Hermite average of
    (r^2 + |eta + xi_perp|^2)^(gamma/2), frame aligned with xi_perp."""
    if gamma == 0.0:
        return np.ones(np.broadcast(r, s).shape)
    x, w = vel.gauss_hermite_prob(n_gh)
    out = np.zeros(np.broadcast(r, s).shape)
    for x1, w1 in zip(x, w):
        for x2, w2 in zip(x, w):
            out += w1 * w2 * (r**2 + (x1 + s)**2 + x2**2) ** (0.5 * gamma)
    return out


def _radial_bessel_factor(r, s, gamma, rho_power=0, n_gl=48):
    """int_0^inf rho^rho_power (rho^2+r^2)^(gamma/2) e^(-(rho-s)^2/2)
    i0e(rho s) drho, uniformly accurate in r.

    For gamma > 0 the integrand has branch points at rho = +-ir; where the
    live Gaussian window reaches rho ~ 0 the integral is evaluated in the
    variable u = asinh(rho/r) (rho = r sinh u), which removes the square
    root's curvature blow-up; otherwise plain Gauss-Legendre on the window.
    """
    shape = np.broadcast(r, s).shape
    r = np.broadcast_to(np.asarray(r, dtype=float), shape).ravel()
    s = np.broadcast_to(np.asarray(s, dtype=float), shape).ravel()
    out = np.zeros(r.shape)
    hi = s + 12.0
    lo = np.maximum(0.0, s - 12.0)
    x, w = leggauss(n_gl)

    def integrand(rho, rr, ss):
        val = np.exp(-0.5 * (rho - ss) ** 2) * i0e(rho * ss)
        if rho_power:
            val = val * rho ** rho_power
        if gamma != 0.0:
            val = val * (rho**2 + rr**2) ** (0.5 * gamma)
        return val

    if gamma == 0.0:
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        acc = np.zeros(r.shape)
        for xi, wi in zip(x, w):
            acc += wi * integrand(mid + half * xi, r, s)
        return (acc * half).reshape(shape)
    # gamma > 0: branch points at rho = +-i r.  Plain rule on [max(lo,1), hi]
    # (analyticity radius >= 1 there), sinh substitution on [lo, 1).
    lo_far = np.maximum(lo, 1.0)
    half = 0.5 * (hi - lo_far)
    mid = 0.5 * (hi + lo_far)
    acc = np.zeros(r.shape)
    for xi, wi in zip(x, w):
        acc += wi * integrand(mid + half * xi, r, s)
    out = acc * half
    near = lo < 1.0
    if np.any(near):
        rn = np.maximum(r[near], 1e-300)
        sn = s[near]
        u_lo = np.arcsinh(lo[near] / rn)
        u_hi = np.arcsinh(1.0 / rn)
        xs, ws = leggauss(14)
        acc = np.zeros(rn.shape)
        edges = np.linspace(0.0, 1.0, 6)
        for p0, p1 in zip(edges[:-1], edges[1:]):
            uh = 0.5 * (p1 - p0) * (u_hi - u_lo)
            um = u_lo + 0.5 * (p1 + p0) * (u_hi - u_lo)
            for xi, wi in zip(xs, ws):
                u = um + uh * xi
                rho = rn * np.sinh(u)
                jac = rn * np.cosh(u)
                acc += wi * uh * jac * integrand(rho, rn, sn)
        out[near] += acc
    return out.reshape(shape)


def kernel_route_matrices(basis, cfg, n_polar=24, n_radial=28, n_phi=None,
                          block=32, reach=9.5, planar="bessel", n_outer=None):
    """Galerkin matrices of the gain pieces G1 (v'-kernel), G2 (v*'-kernel),
    the loss piece P2, and nu-multiplication, via the explicit kernels.

    Per outer node the sphere frame is aligned with v so every kernel factor
    is azimuth independent; the azimuthal integral of the remaining basis
    polynomial is then exact for n_phi >= D + 1.  Radial nodes follow the
    Gaussian ridge r ~ v.omega of the reduced kernels.
    """
    D = basis.max_total_degree
    if n_outer is None:
        n_outer = max(basis.quad.order_per_dim, 2 * D + 8)
    quad = vel.build_quadrature(n_outer)
    outer_table = vel.evaluate_basis(quad.nodes, D)
    nb = basis.n_b
    if n_phi is None:
        n_phi = D + 3
    tt, wt = leggauss(n_polar)                       # cos(theta) rule
    xr, wr0 = leggauss(n_radial)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    wphi = 2.0 * np.pi / n_phi
    cphi, sphi = np.cos(phi), np.sin(phi)
    cc = (2.0 * np.pi) ** (-1.5)
    G1 = np.zeros((nb, nb))
    G2 = np.zeros((nb, nb))
    P2 = np.zeros((nb, nb))
    NU = np.zeros((nb, nb))
    for a0 in range(0, quad.n_nodes, block):
        v = quad.nodes[a0:a0 + block]                # (b, 3)
        b = v.shape[0]
        V = np.linalg.norm(v, axis=1)
        vhat = np.where(V[:, None] > 1e-14, v / np.maximum(V, 1e-300)[:, None],
                        np.array([0.0, 0.0, 1.0]))
        # orthonormal in-plane frame per node
        helper = np.where(np.abs(vhat[:, 0:1]) < 0.9,
                          np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
        e1 = np.cross(vhat, helper)
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        e2 = np.cross(vhat, e1)
        c = V[:, None] * tt[None, :]                 # (b, nt)
        s = V[:, None] * np.sqrt(1.0 - tt[None, :] ** 2)
        lo = np.maximum(0.0, c - reach)
        hi = np.maximum(c, 0.0) + reach
        half = 0.5 * (hi - lo)
        r = lo[..., None] + half[..., None] * (xr[None, None, :] + 1.0)
        wr = half[..., None] * wr0[None, None, :]    # (b, nt, nr)
        gauss = np.exp(-0.5 * (c[..., None] - r) ** 2)
        if planar == "gh":
            jb = _planar_gain_factor(r, s[..., None], cfg.gamma)
        else:
            jb = _radial_bessel_factor(r, s[..., None], cfg.gamma, rho_power=1)
        ja = _radial_bessel_factor(r, s[..., None], cfg.gamma)
        w_ang = wt[None, :, None] * wphi * wr
        w_b = cc * gauss * jb * w_ang
        w_a = cc * r * gauss * ja * w_ang
        w_p = (r ** (2.0 + cfg.gamma)) * cc \
            * np.exp(-0.5 * (r - c[..., None]) ** 2 - 0.5 * s[..., None] ** 2) \
            * w_ang
        # omega(t, phi) in the per-node frame; xi = v - r*omega
        st = np.sqrt(1.0 - tt**2)
        om = (tt[None, :, None, None] * vhat[:, None, None, :]
              + st[None, :, None, None]
              * (cphi[None, None, :, None] * e1[:, None, None, :]
                 + sphi[None, None, :, None] * e2[:, None, None, :]))
        xi = (v[:, None, None, None, :]
              - r[..., None, None] * om[:, :, None, :, :])
        Exi = vel.evaluate_basis(xi.reshape(-1, 3), D) \
            .reshape(b, n_polar, n_radial, n_phi, nb)
        contrib_b = np.einsum("btr,btrfj->bj", w_b, Exi)
        contrib_a = np.einsum("btr,btrfj->bj", w_a, Exi)
        contrib_p = np.einsum("btr,btrfj->bj", w_p, Exi)
        nu_node = np.sum(w_p, axis=(1, 2)) * n_phi
        Ek = outer_table[a0:a0 + block]
        wq = quad.weights[a0:a0 + block]
        G1 += Ek.T @ (wq[:, None] * contrib_b)
        G2 += Ek.T @ (wq[:, None] * contrib_a)
        P2 += Ek.T @ (wq[:, None] * contrib_p)
        NU += Ek.T @ ((wq * nu_node)[:, None] * Ek)
    return {"G1": G1, "G2": G2, "P2": P2, "NU": NU}


def two_species_block(diag, off):
    """[[diag, off], [off, diag]] as a 2 nb x 2 nb matrix."""
    return np.block([[diag, off], [off, diag]])


# ---------------------------------------------------------------------------
# Operator set


@dataclass
class OperatorSet:
    """Assembled Galerkin operators over a Hermite basis."""

    basis: vel.HermiteBasis
    cfg: KernelConfig
    nu_values: np.ndarray            # nu at quadrature nodes
    A_mat: np.ndarray                # g -> -Q(g, 1)
    B_mat: np.ndarray                # h -> -Q(1, h)
    L_mat: np.ndarray                # single-species linearized operator
    Lfrak_mat: np.ndarray
    LplusLfrak_mat: np.ndarray
    L2s_mat: np.ndarray              # two-species block operator
    route: str
    quad_order: int
    Q_tensor: np.ndarray = None
    K1_mat: np.ndarray = None
    K2_mat: np.ndarray = None
    nu_mat: np.ndarray = field(default=None, repr=False)

    @property
    def n_b(self):
        return self.basis.n_b

    def require_tensor(self):
        if self.Q_tensor is None:
            raise StateError("Q_tensor not precomputed for this OperatorSet")
        return self.Q_tensor


def _matrices_from_AB(A, B):
    L = A + B
    Lfrak = A - B
    L2s = two_species_block(L + A, B)
    return L, Lfrak, A + A, L2s


def assemble_L(basis, cfg, route="via_Q", with_tensor=False, cache_dir=None,
               pair_deg=None, route_check_tol=None, use_cache=True):
    """Assemble the operator set along one route.

    route_check_tol, when given, also assembles the other route and raises
    DiagnosticError if the relative discrepancy of the two-species matrices
    exceeds the tolerance.
    """
    D = basis.max_total_degree
    nu_values = collision_frequency(basis.quad.nodes, cfg)
    if cache_dir is None:
        cache_dir = io_utils.default_cache_dir()

    def cached(kind, order, builder):
        if not use_cache:
            return builder()
        path = q_cache_path(cache_dir, D, cfg, order, kind=kind)
        hit = io_utils.read_operator_cache(path, D, basis.n_b, order)
        if hit is not None:
            return hit
        arr = builder()
        io_utils.write_operator_cache(path, arr, D, basis.n_b, order)
        return arr

    if route == "via_Q":
        pq = pair_quadrature(cfg.gamma, pair_deg or 2 * D)
        quad_order = pq.r_nodes.shape[0]
        AB = cached("lmats_q", quad_order,
                    lambda: np.stack(assemble_pair_matrices(basis, cfg, pq)))
        A, B = AB[0], AB[1]
        k1 = k2 = None
    elif route == "via_kernels":
        quad_order = basis.quad.order_per_dim
        parts_arr = cached(
            "lmats_k", quad_order,
            lambda: (lambda p: np.stack([p["G1"], p["G2"], p["P2"],
                                         p["NU"]]))(
                kernel_route_matrices(basis, cfg)))
        G1, G2, P2, NU = parts_arr
        A = NU - G1
        B = P2 - G2
        k1 = two_species_block(2.0 * G1 + G2, G2)
        k2 = two_species_block(P2, P2)
    else:
        raise ConfigurationError(f"unknown route {route!r}")
    L, Lfrak, LpL, L2s = _matrices_from_AB(A, B)
    tensor = None
    if with_tensor:
        tensor = load_or_build_q_tensor(basis, cfg, cache_dir=cache_dir)
    ops = OperatorSet(basis=basis, cfg=cfg, nu_values=nu_values,
                      A_mat=A, B_mat=B, L_mat=L, Lfrak_mat=Lfrak,
                      LplusLfrak_mat=LpL, L2s_mat=L2s, route=route,
                      quad_order=quad_order, Q_tensor=tensor,
                      K1_mat=k1, K2_mat=k2)
    if route_check_tol is not None:
        other = "via_kernels" if route == "via_Q" else "via_Q"
        ops2 = assemble_L(basis, cfg, route=other)
        disc = route_discrepancy(ops, ops2)
        if disc > route_check_tol:
            raise DiagnosticError(
                f"collision-route disagreement {disc:.3e} exceeds "
                f"{route_check_tol:.1e}", discrepancy=disc)
    return ops


def route_discrepancy(ops_a, ops_b):
    """Max-entry relative discrepancy of the two-species matrices."""
    scale = np.max(np.abs(ops_a.L2s_mat))
    return float(np.max(np.abs(ops_a.L2s_mat - ops_b.L2s_mat)) / scale)


def q_cache_path(cache_dir, D, cfg, quad_order, kind="qtensor"):
    name = (f"{kind}_g{cfg.gamma:g}_D{D}_q{quad_order}"
            f"_s{cfg.sigma_polar}x{cfg.sigma_azimuth}.bin")
    return os.path.join(cache_dir, name)


def load_or_build_q_tensor(basis, cfg, cache_dir=None, pq=None):
    """Q tensor with disk caching keyed by (gamma, D, quadrature orders)."""
    D = basis.max_total_degree
    if pq is None:
        pq = pair_quadrature(cfg.gamma, 3 * D)
    quad_order = pq.r_nodes.shape[0]
    if cache_dir is None:
        cache_dir = io_utils.default_cache_dir()
    path = q_cache_path(cache_dir, D, cfg, quad_order)
    cached = io_utils.read_operator_cache(path, D, basis.n_b, quad_order)
    if cached is not None and cached.shape == (basis.n_b,) * 3:
        return cached
    Q = assemble_q_tensor(basis, cfg, pq)
    io_utils.write_operator_cache(path, Q, D, basis.n_b, quad_order)
    return Q


# ---------------------------------------------------------------------------
# Applications, projections, spectral gap


def apply_Q(f, h, ops):
    """Galerkin contraction of the bilinear collision operator."""
    Q = ops.require_tensor()
    f = np.asarray(f)
    h = np.asarray(h)
    if f.shape[-1] != ops.n_b or h.shape[-1] != ops.n_b:
        raise ShapeError("coefficient length != n_b")
    tmp = np.tensordot(f, Q, axes=([-1], [0]))   # (..., j, k)
    return np.einsum("...jk,...j->...k", tmp, h)


def apply_L2s(G, ops):
    """Two-species operator on (..., 2, n_b) coefficient arrays."""
    Gp, Gm = G[..., 0, :], G[..., 1, :]
    LA = ops.L_mat + ops.A_mat
    out_p = Gp @ LA.T + Gm @ ops.B_mat.T
    out_m = Gm @ LA.T + Gp @ ops.B_mat.T
    return np.stack([out_p, out_m], axis=-2)


def kernel_vectors_2s(basis):
    """Orthonormal basis of ker L (two species): (1,0), (0,1), (v,v)/sqrt2,
    (X,X)/sqrt3 as (6, 2, n_b) coefficients."""
    nb = basis.n_b
    one = vel.coeffs_one(basis)
    vv = vel.coeffs_v(basis)
    chi = vel.coeffs_chi(basis)
    vecs = np.zeros((6, 2, nb))
    vecs[0, 0] = one
    vecs[1, 1] = one
    for i in range(3):
        vecs[2 + i, 0] = vv[i] / np.sqrt(2.0)
        vecs[2 + i, 1] = vv[i] / np.sqrt(2.0)
    vecs[5, 0] = chi / np.sqrt(3.0)
    vecs[5, 1] = chi / np.sqrt(3.0)
    return vecs


def project(G, which, basis):
    """Kernel projections.

    which = "P": two-species projection onto ker L, input (..., 2, n_b).
    which = "P_L": single-species onto span{1, v, X}, input (..., n_b).
    which = "P_LplusLfrak": single-species onto span{1}.
    """
    G = np.asarray(G)
    if which == "P":
        if G.shape[-2] != 2:
            raise ShapeError("two-species input required for P")
        vecs = kernel_vectors_2s(basis)
        coef = np.einsum("...sn,ksn->...k", G, vecs)
        return np.einsum("...k,ksn->...sn", coef, vecs)
    if which == "P_L":
        one = vel.coeffs_one(basis)
        vv = vel.coeffs_v(basis)
        chi = vel.coeffs_chi(basis)
        vecs = np.concatenate([one[None], vv,
                               (chi / np.linalg.norm(chi))[None]], axis=0)
        coef = G @ vecs.T
        return coef @ vecs
    if which == "P_LplusLfrak":
        one = vel.coeffs_one(basis)
        return (G @ one)[..., None] * one
    raise ConfigurationError(f"unknown projection {which!r}")


def moments_P(G, basis):
    """(rho+, rho-, u, theta) of a two-species coefficient array."""
    one = vel.coeffs_one(basis)
    vv = vel.coeffs_v(basis)
    chi = vel.coeffs_chi(basis)
    rho_p = G[..., 0, :] @ one
    rho_m = G[..., 1, :] @ one
    half = 0.5 * (G[..., 0, :] + G[..., 1, :])
    u = np.stack([half @ vv[i] for i in range(3)], axis=-1)
    theta = (half @ chi) * (2.0 / 3.0)
    return rho_p, rho_m, u, theta


def nu_weighted_gram(ops):
    if ops.nu_mat is None:
        w = ops.basis.quad.weights * ops.nu_values
        ops.nu_mat = ops.basis.eval_table.T @ (w[:, None] * ops.basis.eval_table)
    return ops.nu_mat


def spectral_gap(ops, return_vector=False):
    """Smallest eigenvalue of the nu-weighted Rayleigh quotient of the
    two-species operator on the orthogonal complement of its kernel."""
    from scipy.linalg import eigh, null_space
    nb = ops.n_b
    K = kernel_vectors_2s(ops.basis).reshape(6, 2 * nb)
    Qc = null_space(K)
    L2s = 0.5 * (ops.L2s_mat + ops.L2s_mat.T)
    Nmat = nu_weighted_gram(ops)
    N2s = two_species_block(Nmat, np.zeros_like(Nmat))
    Lr = Qc.T @ L2s @ Qc
    Nr = Qc.T @ N2s @ Qc
    vals, vecs = eigh(Lr, Nr)
    lam = float(vals[0])
    if lam <= 0:
        raise AssemblyInconsistencyError(
            f"nonpositive spectral gap {lam:.3e}")
    if return_vector:
        g = (Qc @ vecs[:, 0]).reshape(2, nb)
        return lam, g
    return lam


def random_collision_pairs(rng, n):
    """Sample (v, v*, v', v*') quadruples satisfying the collision law."""
    v = rng.standard_normal((n, 3))
    vs = rng.standard_normal((n, 3))
    om = rng.standard_normal((n, 3))
    om /= np.linalg.norm(om, axis=1, keepdims=True)
    vp, vsp = collide(v, vs, om)
    return v, vs, vp, vsp
