import numpy as np
import pytest

from vmblab import velocity as vel
from vmblab.errors import ConfigurationError, ShapeError


@pytest.fixture(scope="module")
def quad():
    return vel.build_quadrature(8)


@pytest.fixture(scope="module")
def basis(quad):
    return vel.build_basis(4, quad)


def test_weights_normalized(quad):
    assert abs(quad.weights.sum() - 1.0) < 1e-12
    assert np.all(quad.weights > 0)


def test_second_fourth_moments(quad):
    vsq = np.sum(quad.nodes**2, axis=1)
    assert abs(vel.bracket(vsq, quad) - 3.0) < 1e-10
    assert abs(vel.bracket(vsq**2, quad) - 15.0) < 1e-8


def test_velocity_covariance_identity(quad):
    for i in range(3):
        for j in range(3):
            val = vel.bracket(quad.nodes[:, i] * quad.nodes[:, j], quad)
            assert abs(val - (1.0 if i == j else 0.0)) < 1e-10


def test_odd_moment_vanishes(quad):
    assert abs(vel.bracket(quad.nodes[:, 0] ** 3, quad)) < 1e-12


def test_order_too_small():
    with pytest.raises(ConfigurationError):
        vel.build_quadrature(3)


def test_bracket_shape_mismatch(quad):
    with pytest.raises(ShapeError):
        vel.bracket(np.ones(quad.n_nodes + 1), quad)


def test_moment_exactness_high_degree(quad):
    # exact through degree 2*order-1 = 15 per dimension
    x = quad.nodes[:, 0]
    # E[x^14] = 13!! = 135135
    assert abs(vel.bracket(x**14, quad) - 135135.0) / 135135.0 < 1e-12


def test_gram_orthonormal(basis):
    w = basis.quad.weights
    G = basis.eval_table.T @ (w[:, None] * basis.eval_table)
    assert np.max(np.abs(G - np.eye(basis.n_b))) < 1e-10


def test_basis_size(basis):
    # C(D+3, 3) indices for total degree <= D
    assert basis.n_b == 35
    assert vel.build_basis(6, vel.build_quadrature(8)).n_b == 84


def test_projection_roundtrip(basis):
    rng = np.random.default_rng(7)
    c = rng.standard_normal(basis.n_b)
    vals = vel.eval_coeffs(c, basis)
    c2 = vel.hermite_project(vals, basis)
    assert np.max(np.abs(c2 - c)) < 1e-10


def test_project_basis_function(basis):
    vals = basis.eval_table[:, 11]
    c = vel.hermite_project(vals, basis)
    expect = np.zeros(basis.n_b)
    expect[11] = 1.0
    assert np.max(np.abs(c - expect)) < 1e-10


def test_project_A12_single_block(basis):
    v = basis.quad.nodes
    c = vel.hermite_project(v[:, 0] * v[:, 1], basis)
    nz = np.flatnonzero(np.abs(c) > 1e-10)
    assert len(nz) == 1
    assert basis.indices[nz[0]] == (1, 1, 0)


def test_C_function_orthogonal_to_invariants(basis):
    # C(v) = |v|^4/4 - 5|v|^2/2 + 15/4, orthogonal to 1 and to X
    v = basis.quad.nodes
    vsq = np.sum(v**2, axis=1)
    cfun = 0.25 * vsq**2 - 2.5 * vsq + 3.75
    w = basis.quad.weights
    assert abs(np.sum(w * cfun)) < 1e-10
    assert abs(np.sum(w * cfun * (0.5 * vsq - 1.5))) < 1e-10
    # brute-force quadrature oracle equals the projected reconstruction
    c = vel.hermite_project(cfun, basis)
    assert np.max(np.abs(vel.eval_coeffs(c, basis) - cfun)) < 1e-9


def test_deriv_ops_exact(basis):
    rng = np.random.default_rng(3)
    # random polynomial of degree <= D-1 so v-derivatives stay exact
    mask = basis.degrees() <= basis.max_total_degree - 1
    c = rng.standard_normal(basis.n_b) * mask
    v = basis.quad.nodes
    h = 1e-6
    for d in range(3):
        dc = basis.deriv_ops[d] @ c
        vp = v.copy()
        vp[:, d] += h
        vm = v.copy()
        vm[:, d] -= h
        fd = (vel.evaluate_basis(vp, basis.max_total_degree) @ c
              - vel.evaluate_basis(vm, basis.max_total_degree) @ c) / (2 * h)
        assert np.max(np.abs(vel.eval_coeffs(dc, basis) - fd)) < 1e-6


def test_mult_ops_exact_low_degree(basis):
    rng = np.random.default_rng(4)
    mask = basis.degrees() <= basis.max_total_degree - 1
    c = rng.standard_normal(basis.n_b) * mask
    v = basis.quad.nodes
    for d in range(3):
        mc = basis.mult_ops[d] @ c
        assert np.max(np.abs(vel.eval_coeffs(mc, basis)
                             - v[:, d] * vel.eval_coeffs(c, basis))) < 1e-9


def test_deriv_ops_commute(basis):
    for a in range(3):
        for b in range(3):
            C = (basis.deriv_ops[a] @ basis.deriv_ops[b]
                 - basis.deriv_ops[b] @ basis.deriv_ops[a])
            assert np.max(np.abs(C)) < 1e-12


def test_ladder_commutator_identity(basis):
    # [d/dv_i, v_i] = I on degree <= D-2
    mask = basis.degrees() <= basis.max_total_degree - 2
    rng = np.random.default_rng(5)
    c = rng.standard_normal(basis.n_b) * mask
    for d in range(3):
        comm = (basis.deriv_ops[d] @ basis.mult_ops[d]
                - basis.mult_ops[d] @ basis.deriv_ops[d]) @ c
        assert np.max(np.abs(comm - c)) < 1e-12


def test_rect_mult_exact(quad):
    b4 = vel.build_basis(4, quad)
    b6 = vel.build_basis(6, quad)
    ops = vel.rect_mult_ops(b4, b6)
    rng = np.random.default_rng(6)
    c = rng.standard_normal(b4.n_b)
    v = quad.nodes
    for d in range(3):
        lhs = vel.eval_coeffs(ops[d] @ c, b6)
        rhs = v[:, d] * vel.eval_coeffs(c, b4)
        assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_embed_restrict_roundtrip(quad):
    b4 = vel.build_basis(4, quad)
    b6 = vel.build_basis(6, quad)
    rng = np.random.default_rng(8)
    c = rng.standard_normal(b4.n_b)
    up = vel.embed_coeffs(c, b4, b6)
    assert np.max(np.abs(vel.restrict_coeffs(up, b6, b4) - c)) == 0.0


def test_invariant_coeff_vectors(basis):
    v = basis.quad.nodes
    vsq = np.sum(v**2, axis=1)
    assert np.max(np.abs(vel.eval_coeffs(vel.coeffs_one(basis), basis) - 1.0)) < 1e-12
    for i in range(3):
        assert np.max(np.abs(
            vel.eval_coeffs(vel.coeffs_v(basis)[i], basis) - v[:, i])) < 1e-12
    assert np.max(np.abs(vel.eval_coeffs(vel.coeffs_vsq(basis), basis) - vsq)) < 1e-11
    assert np.max(np.abs(
        vel.eval_coeffs(vel.coeffs_chi(basis), basis) - (0.5 * vsq - 1.5))) < 1e-11
