import numpy as np
import pytest

from vmblab import collision as col
from vmblab import velocity as vel
from vmblab.errors import AssemblyInconsistencyError, ConfigurationError

# gamma = 0 closed forms (constant kernel preserves polynomial subspaces):
# L A = (2/5) A, L B = (4/15) B, L C = (4/15) C, (L+Lfrak) v = (2/3) v,
# (L+Lfrak) X = (2/3) X, spectral gap 8/15.


@pytest.fixture(scope="module")
def quad():
    return vel.build_quadrature(8)


@pytest.fixture(scope="module")
def basis(quad):
    return vel.build_basis(4, quad)


@pytest.fixture(scope="module")
def ops0(basis):
    ops = col.assemble_L(basis, col.KernelConfig(gamma=0.0), use_cache=False)
    ops.Q_tensor = col.assemble_q_tensor(ops.basis, ops.cfg)
    return ops


@pytest.fixture(scope="module")
def ops1(basis):
    return col.assemble_L(basis, col.KernelConfig(gamma=1.0), use_cache=False)


def shapes(basis):
    v = basis.quad.nodes
    vsq = np.sum(v**2, axis=1)
    A12 = vel.hermite_project(v[:, 0] * v[:, 1], basis)
    B1 = vel.hermite_project(v[:, 0] * (0.5 * vsq - 2.5), basis)
    C = vel.hermite_project(0.25 * vsq**2 - 2.5 * vsq + 3.75, basis)
    return A12, B1, C


def test_gamma_validation():
    with pytest.raises(ConfigurationError):
        col.KernelConfig(gamma=2.0)


def test_angular_normalization():
    assert abs(col.angular_normalization(col.KernelConfig()) - 1.0) < 1e-12


def test_collision_rule_conserves():
    rng = np.random.default_rng(1)
    v, vs, vp, vsp = col.random_collision_pairs(rng, 200)
    assert np.max(np.abs(v + vs - vp - vsp)) < 1e-12
    en = np.sum(v**2 + vs**2, axis=1) - np.sum(vp**2 + vsp**2, axis=1)
    assert np.max(np.abs(en)) < 1e-11


def test_nu_gamma0_is_one(quad):
    nu = col.collision_frequency(quad.nodes, col.KernelConfig(gamma=0.0))
    assert np.max(np.abs(nu - 1.0)) < 1e-12


def test_nu_gamma1_origin():
    # mean of the chi distribution with 3 degrees of freedom
    got = col.collision_frequency(np.zeros(3), col.KernelConfig(gamma=1.0))
    assert abs(got - 2.0 * np.sqrt(2.0 / np.pi)) < 1e-6


def test_nu_large_v_asymptote():
    got = col.collision_frequency(np.array([50.0, 0.0, 0.0]),
                                  col.KernelConfig(gamma=1.0))
    assert 0.98 <= got / 51.0 <= 1.02


def test_nu_bounds_sampled():
    rng = np.random.default_rng(2)
    v = rng.standard_normal((1000, 3)) * 3.0
    for g in (0.0, 1.0):
        nu = col.collision_frequency(v, col.KernelConfig(gamma=g))
        ratio = nu / (1.0 + np.linalg.norm(v, axis=1)) ** g
        c_lo, c_hi = ratio.min(), ratio.max()
        assert c_lo > 0.0
        assert np.all(nu >= 0.999999 * c_lo * (1 + np.linalg.norm(v, axis=1))**g)
        assert np.all(nu <= 1.000001 * c_hi * (1 + np.linalg.norm(v, axis=1))**g)


def test_nu_collision_law_bound():
    rng = np.random.default_rng(3)
    v, vs, vp, vsp = col.random_collision_pairs(rng, 500)
    cfg = col.KernelConfig(gamma=1.0)
    lhs = col.collision_frequency(v, cfg) + col.collision_frequency(vs, cfg)
    rhs = col.collision_frequency(vp, cfg) + col.collision_frequency(vsp, cfg)
    C = np.max(lhs / rhs)
    assert np.isfinite(C) and C < 10.0


def test_L_symmetric(ops0, ops1):
    for ops in (ops0, ops1):
        assert np.max(np.abs(ops.L_mat - ops.L_mat.T)) < 1e-10
        assert np.max(np.abs(ops.L2s_mat - ops.L2s_mat.T)) < 1e-10


def test_L_annihilates_kernel(ops0, ops1, basis):
    vecs = [vel.coeffs_one(basis), *vel.coeffs_v(basis), vel.coeffs_chi(basis)]
    for ops in (ops0, ops1):
        for c in vecs:
            assert np.max(np.abs(ops.L_mat @ c)) < 1e-8
        for G in col.kernel_vectors_2s(basis).reshape(6, -1):
            assert np.max(np.abs(ops.L2s_mat @ G)) < 1e-8


def test_LplusLfrak_kernel_is_constants(ops0, basis):
    one = vel.coeffs_one(basis)
    assert np.max(np.abs(ops0.LplusLfrak_mat @ one)) < 1e-8
    # and nothing else in the collision-invariant span
    v1 = vel.coeffs_v(basis)[0]
    assert np.linalg.norm(ops0.LplusLfrak_mat @ v1) > 0.1


def test_gamma0_eigenrelations(ops0, basis):
    A12, B1, C = shapes(basis)
    assert np.max(np.abs(ops0.L_mat @ A12 - 0.4 * A12)) < 1e-10
    assert np.max(np.abs(ops0.L_mat @ B1 - (4.0 / 15.0) * B1)) < 1e-10
    assert np.max(np.abs(ops0.L_mat @ C - (4.0 / 15.0) * C)) < 1e-10
    v1 = vel.coeffs_v(basis)[0]
    chi = vel.coeffs_chi(basis)
    assert np.max(np.abs(ops0.LplusLfrak_mat @ v1 - (2.0 / 3.0) * v1)) < 1e-10
    assert np.max(np.abs(ops0.LplusLfrak_mat @ chi - (2.0 / 3.0) * chi)) < 1e-10


def test_Q_maxwellian_equilibrium(ops0, basis):
    one = vel.coeffs_one(basis)
    assert np.max(np.abs(col.apply_Q(one, one, ops0))) < 1e-10


def test_Q_mass_invariant_exact(ops0):
    assert np.max(np.abs(ops0.Q_tensor[:, :, 0])) < 1e-12


def test_Q_momentum_energy_conservation(ops0, basis):
    rng = np.random.default_rng(4)
    f = rng.standard_normal(basis.n_b)
    h = rng.standard_normal(basis.n_b)
    sym = col.apply_Q(f, h, ops0) + col.apply_Q(h, f, ops0)
    for psi in [*vel.coeffs_v(basis), vel.coeffs_vsq(basis)]:
        assert abs(psi @ sym) < 1e-10


def test_Q_kernel_square_identity(ops0, basis):
    rng = np.random.default_rng(5)
    v = basis.quad.nodes
    u = rng.standard_normal(3)
    th = rng.standard_normal()
    gv = u @ v.T + th * (0.5 * np.sum(v**2, axis=1) - 1.5)
    g = vel.hermite_project(gv, basis)
    g2 = vel.hermite_project(gv**2, basis)
    lhs = col.apply_Q(g, g, ops0)
    rhs = 0.5 * (ops0.L_mat @ g2)
    assert np.max(np.abs(lhs - rhs)) < 1e-6


def test_tensor_consistent_with_matrices(ops0, basis):
    one = vel.coeffs_one(basis)
    A_t = -np.einsum("ijk,j->ki", ops0.Q_tensor, one)
    B_t = -np.einsum("ijk,i->kj", ops0.Q_tensor, one)
    assert np.max(np.abs(A_t - ops0.A_mat)) < 1e-10
    assert np.max(np.abs(B_t - ops0.B_mat)) < 1e-10


def test_route_equivalence(basis):
    for g in (0.0, 1.0):
        cfg = col.KernelConfig(gamma=g)
        oq = col.assemble_L(basis, cfg, route="via_Q", use_cache=False)
        ok = col.assemble_L(basis, cfg, route="via_kernels", use_cache=False)
        assert col.route_discrepancy(oq, ok) < 1e-6
        assert ok.K1_mat is not None and ok.K2_mat is not None


def test_spectral_gap_gamma0(ops0):
    lam, gvec = col.spectral_gap(ops0, return_vector=True)
    assert abs(lam - 8.0 / 15.0) < 1e-8
    # eigenvector orthogonal to the kernel
    for K in col.kernel_vectors_2s(ops0.basis):
        assert abs(np.sum(K * gvec)) < 1e-8


def test_spectral_gap_positive_gamma1(ops1):
    assert col.spectral_gap(ops1) > 0.0


def test_coercivity_random(ops0):
    lam = col.spectral_gap(ops0)
    rng = np.random.default_rng(6)
    basis = ops0.basis
    Nmat = col.nu_weighted_gram(ops0)
    for _ in range(200):
        G = rng.standard_normal((2, basis.n_b))
        PG = col.project(G, "P", basis)
        Pp = G - PG
        quad_form = np.sum(G.reshape(-1) * (ops0.L2s_mat @ G.reshape(-1)))
        nrm = np.sum(Pp[0] * (Nmat @ Pp[0])) + np.sum(Pp[1] * (Nmat @ Pp[1]))
        assert quad_form >= lam * nrm - 1e-10


def test_projection_idempotent(basis):
    rng = np.random.default_rng(7)
    G = rng.standard_normal((5, 2, basis.n_b))
    P1 = col.project(G, "P", basis)
    P2 = col.project(P1, "P", basis)
    assert np.max(np.abs(P2 - P1)) < 1e-12
    # orthogonality <PG . PperpG> = 0
    dots = np.sum(P1 * (G - P1), axis=(-2, -1))
    assert np.max(np.abs(dots)) < 1e-12


def test_projection_fixes_kernel_field(basis):
    # G0-shaped input is reproduced exactly
    rng = np.random.default_rng(8)
    rho_p, rho_m = rng.standard_normal(2)
    u = rng.standard_normal(3)
    th = rng.standard_normal()
    one = vel.coeffs_one(basis)
    vv = vel.coeffs_v(basis)
    chi = vel.coeffs_chi(basis)
    g_p = rho_p * one + u @ vv + th * chi
    g_m = rho_m * one + u @ vv + th * chi
    G = np.stack([g_p, g_m])
    assert np.max(np.abs(col.project(G, "P", basis) - G)) < 1e-12
    mp_, mm_, mu, mth = col.moments_P(G, basis)
    assert abs(mp_ - rho_p) < 1e-12 and abs(mm_ - rho_m) < 1e-12
    assert np.max(np.abs(mu - u)) < 1e-12 and abs(mth - th) < 1e-12


def test_projection_kills_kerperp(basis):
    A12, _, _ = shapes(basis)
    G = np.stack([A12, A12])
    assert np.max(np.abs(col.project(G, "P", basis))) < 1e-12


def test_P_L_and_P_LplusLfrak(basis):
    rng = np.random.default_rng(9)
    g = rng.standard_normal(basis.n_b)
    pl = col.project(g, "P_L", basis)
    assert np.max(np.abs(col.project(pl, "P_L", basis) - pl)) < 1e-12
    pc = col.project(g, "P_LplusLfrak", basis)
    one = vel.coeffs_one(basis)
    assert abs(pc @ one - g @ one) < 1e-12
    assert np.max(np.abs(pc - (g @ one) * one)) < 1e-12


def test_apply_L2s_matches_block(basis, ops0):
    rng = np.random.default_rng(10)
    G = rng.standard_normal((2, basis.n_b))
    direct = (ops0.L2s_mat @ G.reshape(-1)).reshape(2, basis.n_b)
    assert np.max(np.abs(col.apply_L2s(G, ops0) - direct)) < 1e-12


def test_gap_refinement_small(quad):
    # D=3 vs D=4 at gamma=0 both hit the degree<=2 minimizer exactly
    b3 = vel.build_basis(3, quad)
    b4 = vel.build_basis(4, quad)
    cfg = col.KernelConfig(gamma=0.0)
    l3 = col.spectral_gap(col.assemble_L(b3, cfg, use_cache=False))
    l4 = col.spectral_gap(col.assemble_L(b4, cfg, use_cache=False))
    assert abs(l3 - l4) / l4 < 0.01
