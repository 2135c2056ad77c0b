"""Discrete velocity space.

Maxwellian-weighted tensor Gauss-Hermite quadrature on R^3, the orthonormal
Hermite tensor basis truncated by total degree, the bracket <f> = int f M dv,
and the ladder operators (d/dv_i and multiplication by v_i) on coefficients.
The reference weight is the standard Maxwellian M(v) = (2pi)^{-3/2}
exp(-|v|^2/2); every inner product below is taken against M dv.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_hermitenorm

from .errors import ConfigurationError, ShapeError


def gauss_hermite_prob(n):
    """Nodes/weights for int f(x) (2pi)^{-1/2} e^{-x^2/2} dx = sum w f(x)."""
    x, w = roots_hermitenorm(n)
    return x, w / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class VelocityQuadrature:
    """Tensor Gauss-Hermite rule adapted to the Maxwellian weight."""

    nodes: np.ndarray          # (n_nodes, 3)
    weights: np.ndarray        # (n_nodes,), sums to 1
    order_per_dim: int

    @property
    def n_nodes(self):
        return self.nodes.shape[0]


def build_quadrature(order_per_dim):
    """Build the tensor quadrature; exact through degree 2*order-1 per dim."""
    if order_per_dim < 4:
        raise ConfigurationError(
            f"order_per_dim must be >= 4, got {order_per_dim}")
    x, w = gauss_hermite_prob(order_per_dim)
    X1, X2, X3 = np.meshgrid(x, x, x, indexing="ij")
    W1, W2, W3 = np.meshgrid(w, w, w, indexing="ij")
    nodes = np.stack([X1.ravel(), X2.ravel(), X3.ravel()], axis=1)
    weights = (W1 * W2 * W3).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return VelocityQuadrature(nodes=nodes, weights=weights,
                              order_per_dim=order_per_dim)


def bracket(values, quad):
    """<f> = int f M dv for f sampled at the quadrature nodes.

    ``values`` may carry leading batch axes; the node axis is the last one.
    """
    values = np.asarray(values)
    if values.shape[-1] != quad.n_nodes:
        raise ShapeError(
            f"sample length {values.shape[-1]} != node count {quad.n_nodes}")
    return values @ quad.weights


@lru_cache(maxsize=None)
def total_degree_indices(max_total_degree):
    """Multi-indices |alpha| <= D in graded lexicographic order."""
    idx = []
    for deg in range(max_total_degree + 1):
        for a1 in range(deg, -1, -1):
            for a2 in range(deg - a1, -1, -1):
                idx.append((a1, a2, deg - a1 - a2))
    return tuple(idx)


def hermite_1d_table(x, max_degree):
    """Normalized probabilists' Hermite values He_n(x)/sqrt(n!), n <= max."""
    x = np.asarray(x, dtype=float)
    out = np.empty((max_degree + 1,) + x.shape)
    out[0] = 1.0
    if max_degree >= 1:
        out[1] = x
    for n in range(1, max_degree):
        # He_{n+1} = x He_n - n He_{n-1}; normalized recurrence below.
        out[n + 1] = (x * out[n] - np.sqrt(n) * out[n - 1]) / np.sqrt(n + 1)
    return out


def evaluate_basis(points, max_total_degree):
    """Evaluate all basis functions at arbitrary points (shape (m, 3))."""
    points = np.asarray(points, dtype=float)
    tables = [hermite_1d_table(points[..., d], max_total_degree)
              for d in range(3)]
    idx = total_degree_indices(max_total_degree)
    out = np.empty(points.shape[:-1] + (len(idx),))
    for a, (a1, a2, a3) in enumerate(idx):
        out[..., a] = tables[0][a1] * tables[1][a2] * tables[2][a3]
    return out


def _ladder_matrices(indices, pos):
    """1-D ladder actions lifted to the tensor basis at dimension ``pos``.

    Returns (deriv, mult) in coefficient space: if f = sum c_a e_a then
    d f/dv = sum (deriv @ c)_a e_a, and v*f truncated likewise.
    """
    lookup = {a: i for i, a in enumerate(indices)}
    n = len(indices)
    deriv = np.zeros((n, n))
    mult = np.zeros((n, n))
    for i, a in enumerate(indices):
        k = a[pos]
        # d/dv e_k = sqrt(k) e_{k-1}
        if k >= 1:
            lo = list(a)
            lo[pos] = k - 1
            deriv[lookup[tuple(lo)], i] = np.sqrt(k)
        # v e_k = sqrt(k+1) e_{k+1} + sqrt(k) e_{k-1}
        hi = list(a)
        hi[pos] = k + 1
        j = lookup.get(tuple(hi))
        if j is not None:
            mult[j, i] = np.sqrt(k + 1)
        if k >= 1:
            lo = list(a)
            lo[pos] = k - 1
            mult[lookup[tuple(lo)], i] += np.sqrt(k)
    return deriv, mult


@dataclass(frozen=True)
class HermiteBasis:
    """Orthonormal Hermite tensor basis truncated by total degree."""

    max_total_degree: int
    indices: tuple
    eval_table: np.ndarray     # (n_nodes, n_b) values at quadrature nodes
    deriv_ops: tuple           # three (n_b, n_b) matrices, d/dv_i
    mult_ops: tuple            # three (n_b, n_b) matrices, v_i * (truncated)
    quad: VelocityQuadrature = field(repr=False)

    @property
    def n_b(self):
        return len(self.indices)

    def degrees(self):
        return np.array([sum(a) for a in self.indices])


def build_basis(max_total_degree, quad):
    """Build the basis over a quadrature rule.

    The rule must be exact for degree-2D products, i.e. order >= D + 1;
    the package default (order >= D + 2) leaves headroom for weighted
    integrands.
    """
    D = max_total_degree
    if D < 2:
        raise ConfigurationError("max_total_degree must be >= 2 so the "
                                 "collision invariants are representable")
    if quad.order_per_dim < D + 2:
        raise ConfigurationError(
            f"quadrature order {quad.order_per_dim} < D+2 = {D + 2}")
    idx = total_degree_indices(D)
    table = evaluate_basis(quad.nodes, D)
    d1, m1 = _ladder_matrices(idx, 0)
    d2, m2 = _ladder_matrices(idx, 1)
    d3, m3 = _ladder_matrices(idx, 2)
    table.setflags(write=False)
    return HermiteBasis(max_total_degree=D, indices=idx, eval_table=table,
                        deriv_ops=(d1, d2, d3), mult_ops=(m1, m2, m3),
                        quad=quad)


def rect_mult_ops(basis_from, basis_to):
    """Multiplication by v_i as maps from one basis into a larger one.

    Exact when basis_to.max_total_degree >= basis_from.max_total_degree + 1.
    """
    lookup = {a: i for i, a in enumerate(basis_to.indices)}
    ops = []
    for pos in range(3):
        M = np.zeros((basis_to.n_b, basis_from.n_b))
        for i, a in enumerate(basis_from.indices):
            k = a[pos]
            hi = list(a)
            hi[pos] = k + 1
            j = lookup.get(tuple(hi))
            if j is not None:
                M[j, i] = np.sqrt(k + 1)
            if k >= 1:
                lo = list(a)
                lo[pos] = k - 1
                M[lookup[tuple(lo)], i] += np.sqrt(k)
        ops.append(M)
    return tuple(ops)


def embed_coeffs(c, basis_from, basis_to):
    """Zero-pad coefficients from a smaller basis into a larger one."""
    lookup = {a: i for i, a in enumerate(basis_to.indices)}
    out = np.zeros(c.shape[:-1] + (basis_to.n_b,))
    for i, a in enumerate(basis_from.indices):
        out[..., lookup[a]] = c[..., i]
    return out


def restrict_coeffs(c, basis_from, basis_to):
    """Drop coefficients outside the smaller basis (Galerkin projection)."""
    lookup = {a: i for i, a in enumerate(basis_from.indices)}
    out = np.empty(c.shape[:-1] + (basis_to.n_b,))
    for i, a in enumerate(basis_to.indices):
        out[..., i] = c[..., lookup[a]]
    return out


def hermite_project(values, basis):
    """Coefficients c_a = <f e_a> from node samples (batch axes leading)."""
    values = np.asarray(values)
    if values.shape[-1] != basis.quad.n_nodes:
        raise ShapeError(
            f"sample length {values.shape[-1]} != node count "
            f"{basis.quad.n_nodes}")
    return (values * basis.quad.weights) @ basis.eval_table


def eval_coeffs(c, basis):
    """Node samples of sum_a c_a e_a (batch axes leading)."""
    return np.asarray(c) @ basis.eval_table.T


def coeffs_of_function(fn, basis):
    """Project a callable f(v) given node coordinates -> coefficient vector."""
    return hermite_project(fn(basis.quad.nodes), basis)


# Coefficient vectors of the recurring velocity polynomials.

def coeffs_one(basis):
    c = np.zeros(basis.n_b)
    c[basis.indices.index((0, 0, 0))] = 1.0
    return c


def coeffs_v(basis):
    """(3, n_b) coefficients of v_i."""
    out = np.zeros((3, basis.n_b))
    for i, e in enumerate([(1, 0, 0), (0, 1, 0), (0, 0, 1)]):
        out[i, basis.indices.index(e)] = 1.0
    return out


def coeffs_vsq(basis):
    """|v|^2 = sum (He_2(v_i) + 1) in normalized coefficients."""
    c = np.zeros(basis.n_b)
    c[basis.indices.index((0, 0, 0))] = 3.0
    for e in [(2, 0, 0), (0, 2, 0), (0, 0, 2)]:
        c[basis.indices.index(e)] = np.sqrt(2.0)
    return c


def coeffs_chi(basis):
    """X(v) = |v|^2/2 - 3/2 (the temperature collision invariant)."""
    c = 0.5 * coeffs_vsq(basis)
    c[basis.indices.index((0, 0, 0))] -= 1.5
    return c
