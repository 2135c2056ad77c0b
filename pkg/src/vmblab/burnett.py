"""Inversion of the linearized operators on their kernel complements.

Produces the tensor/vector shapes A(v) = v (x) v - |v|^2/3 Id,
B(v) = v (|v|^2/2 - 5/2), C(v) = |v|^4/4 - 5|v|^2/2 + 15/4, their preimages
A_hat, B_hat under the single-species operator, the Ohm preimages
Phi_tilde, Psi_tilde under the two-species difference operator, the
transport coefficients mu, kappa, sigma, lambda, and the constant arrays
entering the first-order Ohm current.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import collision as col
from . import velocity as vel
from .errors import AssemblyInconsistencyError, TruncationDiagnosticError


@dataclass
class SolveResult:
    x: np.ndarray
    removed_norm: float
    residual: float


class OrthoSolver:
    """Pseudo-inverse of a symmetric Galerkin operator on ker-perp.

    Eigenvalues below rel_threshold * max|eig| are treated as kernel and
    deflated; the removed right-hand-side component is reported.
    """

    def __init__(self, mat, rel_threshold=1e-9):
        sym = 0.5 * (mat + mat.T)
        vals, vecs = np.linalg.eigh(sym)
        scale = np.max(np.abs(vals))
        self.kernel_mask = np.abs(vals) < rel_threshold * scale
        self.vals = vals
        self.vecs = vecs
        self.mat = sym

    @property
    def kernel_dim(self):
        return int(self.kernel_mask.sum())

    def solve(self, rhs, warn_tol=1e-6):
        rhs = np.asarray(rhs, dtype=float)
        coef = rhs @ self.vecs
        removed = coef * self.kernel_mask
        removed_norm = float(np.linalg.norm(removed))
        rhs_norm = float(np.linalg.norm(rhs))
        if warn_tol is not None and rhs_norm > 0 \
                and removed_norm > warn_tol * rhs_norm:
            warnings.warn(
                f"right-hand side has kernel component {removed_norm:.3e} "
                f"({removed_norm / rhs_norm:.2e} of its norm)", stacklevel=2)
        inv = np.where(self.kernel_mask, 0.0, coef / np.where(
            self.kernel_mask, 1.0, self.vals))
        x = inv @ self.vecs.T
        resid = float(np.linalg.norm(self.mat @ x - (rhs - removed)))
        return SolveResult(x=x, removed_norm=removed_norm, residual=resid)


def get_solver(ops, operator):
    """Cached kernel-deflating solver for 'L' or 'LplusLfrak'."""
    attr = "_solver_" + operator
    if not hasattr(ops, attr):
        if operator == "L":
            setattr(ops, attr, OrthoSolver(ops.L_mat))
        elif operator == "LplusLfrak":
            setattr(ops, attr, OrthoSolver(ops.LplusLfrak_mat))
        else:
            raise ValueError(f"unknown operator {operator!r}")
    return getattr(ops, attr)


def solve_in_orthogonal(ops, operator, rhs, warn_tol=1e-6):
    """x with op x = P-perp(rhs), x orthogonal to the kernel."""
    return get_solver(ops, operator).solve(rhs, warn_tol=warn_tol)


def tensor_shape_coeffs(basis):
    """Coefficients of A_ij(v), B_i(v), C(v)."""
    v = basis.quad.nodes
    vsq = np.sum(v**2, axis=1)
    A = np.empty((3, 3, basis.n_b))
    for i in range(3):
        for j in range(3):
            A[i, j] = vel.hermite_project(
                v[:, i] * v[:, j] - (vsq / 3.0 if i == j else 0.0), basis)
    B = np.empty((3, basis.n_b))
    for i in range(3):
        B[i] = vel.hermite_project(v[:, i] * (0.5 * vsq - 2.5), basis)
    C = vel.hermite_project(0.25 * vsq**2 - 2.5 * vsq + 3.75, basis)
    return A, B, C


@dataclass
class BurnettBundle:
    """Inverted shapes and their radial profiles."""

    A_coef: np.ndarray           # (3, 3, n_b) A(v)
    B_coef: np.ndarray           # (3, n_b)    B(v)
    C_coef: np.ndarray           # (n_b)       C(v)
    Phi_coef: np.ndarray         # (3, n_b)    Phi = v
    Psi_coef: np.ndarray         # (n_b)       Psi = X
    A_hat: np.ndarray            # (3, 3, n_b) L^-1 A
    B_hat: np.ndarray            # (3, n_b)    L^-1 B
    Phi_tilde: np.ndarray        # (3, n_b)    (L+Lfrak)^-1 v
    Psi_tilde: np.ndarray        # (n_b)       (L+Lfrak)^-1 X
    radial_profiles: dict = field(default_factory=dict)
    max_residual: float = 0.0


@dataclass
class TransportCoefficients:
    mu: float
    kappa: float
    sigma: float
    lam: float


@dataclass
class OhmConstants:
    M_matrix: np.ndarray         # (3, 3)
    V: np.ndarray                # (3,)
    V_bar: np.ndarray            # (3,)
    C_scalar: float
    gamma_minus_family: dict     # term name -> (U (3,), C (float))


def _shells(quad, decimals=8):
    radii = np.round(np.linalg.norm(quad.nodes, axis=1), decimals)
    uniq = np.unique(radii)
    return [(r, np.flatnonzero(radii == r)) for r in uniq]


def _radial_profile(coef, base_vals, basis, min_weight=1e-6):
    """Least-squares ratio coef(v)/base(v) on spherical node shells."""
    quad = basis.quad
    fvals = vel.eval_coeffs(coef, basis)
    rs, ps, residual = [], [], []
    for r, idx in _shells(quad):
        w = quad.weights[idx]
        denom = np.sum(w * base_vals[idx] ** 2)
        if denom < min_weight * np.sum(w):
            continue
        p = np.sum(w * base_vals[idx] * fvals[idx]) / denom
        res = np.sqrt(np.sum(w * (fvals[idx] - p * base_vals[idx]) ** 2)
                      / max(np.sum(w * fvals[idx] ** 2), 1e-300))
        rs.append(r)
        ps.append(p)
        residual.append(res)
    return np.array(rs), np.array(ps), np.array(residual)


def compute_burnett_functions(ops, factorization_tol=None):
    """Invert the operators on the canonical shapes and extract profiles."""
    basis = ops.basis
    A, B, C = tensor_shape_coeffs(basis)
    res = []
    A_hat = np.empty_like(A)
    for i in range(3):
        for j in range(3):
            sr = solve_in_orthogonal(ops, "L", A[i, j])
            A_hat[i, j] = sr.x
            res.append(sr.residual)
    B_hat = np.empty_like(B)
    for i in range(3):
        sr = solve_in_orthogonal(ops, "L", B[i])
        B_hat[i] = sr.x
        res.append(sr.residual)
    vv = vel.coeffs_v(basis)
    Phi_tilde = np.empty((3, basis.n_b))
    for i in range(3):
        sr = solve_in_orthogonal(ops, "LplusLfrak", vv[i])
        Phi_tilde[i] = sr.x
        res.append(sr.residual)
    sr = solve_in_orthogonal(ops, "LplusLfrak", vel.coeffs_chi(basis))
    Psi_tilde = sr.x
    res.append(sr.residual)

    v = basis.quad.nodes
    vsq = np.sum(v**2, axis=1)
    profiles = {}
    for key, coef, base in [
            ("phi", A_hat[0, 1], v[:, 0] * v[:, 1]),
            ("psi", B_hat[0], v[:, 0] * (0.5 * vsq - 2.5)),
            ("alpha_phi", Phi_tilde[0], v[:, 0]),
            ("alpha_psi", Psi_tilde, 0.5 * vsq - 1.5)]:
        profiles[key] = _radial_profile(coef, base, basis)
    bundle = BurnettBundle(A_coef=A, B_coef=B, C_coef=C,
                           Phi_coef=vv, Psi_coef=vel.coeffs_chi(basis),
                           A_hat=A_hat, B_hat=B_hat, Phi_tilde=Phi_tilde,
                           Psi_tilde=Psi_tilde, radial_profiles=profiles,
                           max_residual=float(np.max(res)))
    if factorization_tol is not None:
        worst = max(float(np.max(p[2])) for p in profiles.values())
        if worst > factorization_tol:
            raise TruncationDiagnosticError(
                f"radial factorization violated ({worst:.3f} > "
                f"{factorization_tol}); increase the basis degree")
    return bundle


def compute_transport(bundle, check_positive=True):
    """mu, kappa, sigma, lambda from the inverted shapes."""
    mu = float(np.sum(bundle.A_hat * bundle.A_coef)) / 20.0
    kappa = float(np.sum(bundle.B_hat * bundle.B_coef)) / 15.0
    sigma = (2.0 / 3.0) * float(np.sum(bundle.Phi_tilde * bundle.Phi_coef))
    lam = float(np.sum(bundle.Psi_tilde * bundle.Psi_coef))
    tc = TransportCoefficients(mu=mu, kappa=kappa, sigma=sigma, lam=lam)
    if check_positive and min(mu, kappa, sigma, lam) <= 0.0:
        raise AssemblyInconsistencyError(
            f"nonpositive transport coefficient: {tc}")
    return tc


def compute_ohm_constants(ops, bundle, registry_terms=None, fields=None):
    """Constant arrays of the first-order Ohm current.

    registry_terms, when given, is an iterable of (name, U (3,), C float)
    for the enabled Upsilon-minus terms (computed by the expansion module).
    """
    basis = ops.basis
    vv = vel.coeffs_v(basis)
    chi = vel.coeffs_chi(basis)
    vsq = vel.coeffs_vsq(basis)
    # Q(1, g) = -B g
    w_v = np.stack([solve_in_orthogonal(ops, "LplusLfrak",
                                        -(ops.B_mat @ vv[i])).x
                    for i in range(3)])
    w_vsq = solve_in_orthogonal(ops, "LplusLfrak", -(ops.B_mat @ vsq)).x
    M_matrix = 2.0 * w_v @ vv.T          # M[j, i] = 2 <w_j v_i>
    V = np.array([w_vsq @ vv[i] for i in range(3)])
    V_bar = (4.0 / 3.0) * (w_v @ chi)
    C_scalar = (2.0 / 3.0) * float(w_vsq @ chi)
    family = {}
    if registry_terms is not None:
        for name, U, Cc in registry_terms:
            family[name] = (np.asarray(U, dtype=float), float(Cc))
    return OhmConstants(M_matrix=M_matrix, V=V, V_bar=V_bar,
                        C_scalar=C_scalar, gamma_minus_family=family)
