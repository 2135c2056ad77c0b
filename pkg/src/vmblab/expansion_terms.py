"""Velocity shapes and the term registry for the second-order expansion.

Every summand of the expansion levels is a (coefficient field) x (velocity
shape) product.  Level 0 and 1 terms and the level-2 "core" terms are fixed
by the closure; the remaining level-2 terms form the toggleable registry
(split into the symmetric family, driven by the neutral background, and the
antisymmetric family, driven by charge/field backgrounds).  Index
conventions are Einstein sums over the leading axes of the coefficient
array against the leading axes of the shape array; the layout of each term
is documented by its builder.
"""

import numpy as np

from . import burnett as bur
from . import collision as col
from . import fieldalg as fa
from . import velocity as vel


def q_bilinear(Q, a, b):
    return np.einsum("ijk,i,j->k", Q, a, b)


def _solve_many(ops, operator, rhs):
    rhs = np.asarray(rhs)
    flat = rhs.reshape(-1, rhs.shape[-1])
    out = np.empty_like(flat)
    for i, r in enumerate(flat):
        out[i] = bur.solve_in_orthogonal(ops, operator, r, warn_tol=None).x
    return out.reshape(rhs.shape)


def rot_operators(basis):
    """R_b g = (v x e_b) . grad_v g in coefficient space, b = 1..3."""
    eps = np.zeros((3, 3, 3))
    for i, j, k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        eps[i, j, k] = 1.0
        eps[i, k, j] = -1.0
    ops = []
    for b in range(3):
        R = np.zeros((basis.n_b, basis.n_b))
        for k in range(3):
            for a in range(3):
                if eps[k, a, b]:
                    R += eps[k, a, b] * (basis.mult_ops[a] @ basis.deriv_ops[k])
        ops.append(R)
    return ops


def build_shapes(ops, bundle):
    """All inverted velocity shapes used by the registry (needs Q_tensor)."""
    basis = ops.basis
    Q = ops.require_tensor()
    nb = basis.n_b
    one = vel.coeffs_one(basis)
    vv = vel.coeffs_v(basis)
    X = vel.coeffs_chi(basis)
    vsq = vel.coeffs_vsq(basis)
    A, B, C = bundle.A_coef, bundle.B_coef, bundle.C_coef
    Ahat, Bhat = bundle.A_hat, bundle.B_hat
    Phit, Psit = bundle.Phi_tilde, bundle.Psi_tilde
    rots = rot_operators(basis)
    mult = basis.mult_ops

    def lsolve(rhs):
        return _solve_many(ops, "L", rhs)

    def llsolve(rhs):
        return _solve_many(ops, "LplusLfrak", rhs)

    def qsym(a, b):
        return q_bilinear(Q, a, b) + q_bilinear(Q, b, a)

    s = {"one": one, "v": vv, "X": X, "A": A, "B": B, "C": C,
         "Ahat": Ahat, "Bhat": Bhat, "Phit": Phit, "Psit": Psit}

    # --- symmetric family (single-species inverse) ---
    s["rotPhi_inv"] = lsolve(np.stack(
        [np.stack([rots[b] @ Phit[l] for l in range(3)]) for b in range(3)]))
    s["qvA_inv"] = lsolve(np.stack(
        [[[qsym(vv[m], A[l, n]) for n in range(3)] for l in range(3)]
         for m in range(3)]))
    s["qvB_inv"] = lsolve(np.stack(
        [[qsym(vv[m], B[l]) for l in range(3)] for m in range(3)]))
    s["qvC_inv"] = lsolve(np.stack([qsym(vv[m], C) for m in range(3)]))
    s["qvAhat_inv"] = lsolve(np.stack(
        [[[qsym(vv[m], Ahat[l, n]) for n in range(3)] for l in range(3)]
         for m in range(3)]))
    s["qvBhat_inv"] = lsolve(np.stack(
        [[qsym(vv[m], Bhat[l]) for l in range(3)] for m in range(3)]))
    s["qvsqA_inv"] = lsolve(np.stack(
        [[qsym(vsq, A[l, n]) for n in range(3)] for l in range(3)]))
    s["qvsqB_inv"] = lsolve(np.stack([qsym(vsq, B[l]) for l in range(3)]))
    s["qvsqC_inv"] = lsolve(qsym(vsq, C))
    s["qvsqAhat_inv"] = lsolve(np.stack(
        [[qsym(vsq, Ahat[l, n]) for n in range(3)] for l in range(3)]))
    s["qvsqBhat_inv"] = lsolve(np.stack([qsym(vsq, Bhat[l])
                                         for l in range(3)]))
    s["vC_inv"] = lsolve(np.stack([mult[l] @ C for l in range(3)]))
    s["vA_inv"] = lsolve(np.stack(
        [[[mult[l] @ A[m, n] for n in range(3)] for m in range(3)]
         for l in range(3)]))
    s["vB_inv"] = lsolve(np.stack(
        [[mult[l] @ B[m] for m in range(3)] for l in range(3)]))
    s["vAhat_inv"] = lsolve(np.stack(
        [[[mult[l] @ Ahat[m, n] for n in range(3)] for m in range(3)]
         for l in range(3)]))
    s["vBhat_inv"] = lsolve(np.stack(
        [[mult[l] @ Bhat[m] for m in range(3)] for l in range(3)]))

    # --- antisymmetric family (two-species difference inverse) ---
    s["llA_inv"] = llsolve(A)
    s["llB_inv"] = llsolve(B)
    s["vPhi_inv"] = llsolve(np.stack(
        [[mult[l] @ Phit[m] for m in range(3)] for l in range(3)]))
    s["rotAhat_ll_inv"] = llsolve(np.stack(
        [[[rots[b] @ Ahat[l, m] for m in range(3)] for l in range(3)]
         for b in range(3)]))
    s["rotBhat_ll_inv"] = llsolve(np.stack(
        [[rots[b] @ Bhat[l] for l in range(3)] for b in range(3)]))
    s["q1v_inv"] = llsolve(np.stack([q_bilinear(Q, one, vv[l])
                                     for l in range(3)]))
    s["q1vsq_inv"] = llsolve(q_bilinear(Q, one, vsq))
    s["q1A_inv"] = llsolve(np.stack(
        [[q_bilinear(Q, one, A[l, m]) for m in range(3)] for l in range(3)]))
    s["q1B_inv"] = llsolve(np.stack([q_bilinear(Q, one, B[l])
                                     for l in range(3)]))
    s["q1C_inv"] = llsolve(q_bilinear(Q, one, C))
    s["q1Ahat_inv"] = llsolve(np.stack(
        [[q_bilinear(Q, one, Ahat[l, m]) for m in range(3)]
         for l in range(3)]))
    s["q1Bhat_inv"] = llsolve(np.stack([q_bilinear(Q, one, Bhat[l])
                                        for l in range(3)]))
    s["LA_ll_inv"] = llsolve(np.einsum("kn,ijn->ijk", ops.L_mat, A))
    s["LB_ll_inv"] = llsolve(np.einsum("kn,in->ik", ops.L_mat, B))
    s["LC_ll_inv"] = llsolve(ops.L_mat @ C)
    s["qPhiOne_inv"] = llsolve(np.stack([q_bilinear(Q, Phit[l], one)
                                         for l in range(3)]))
    s["qPhiV_inv"] = llsolve(np.stack(
        [[q_bilinear(Q, Phit[l], vv[m]) for m in range(3)]
         for l in range(3)]))
    s["qPhiX_inv"] = llsolve(np.stack([q_bilinear(Q, Phit[l], X)
                                       for l in range(3)]))
    return s


# ---------------------------------------------------------------------------
# Field context: all primitive fields with analytic time derivatives


class FieldContext:
    """Primitive fields of one (fluid, corrector) snapshot as TFields.

    Every product below is a plain grid product; the time derivative of
    every assembled quantity follows by the product rule from the evolution
    equations of the primitives.
    """

    def __init__(self, fluid_state, corr_state, coeffs, j1_value_fn=None):
        g = fluid_state.grid
        self.grid = g
        self.coeffs = coeffs
        calc = fa.Calc(g)
        self.calc = calc
        mu, kappa, sigma = coeffs.mu, coeffs.kappa, coeffs.sigma

        u0v = calc.to_phys(fluid_state.u_hat)
        th0v = calc.to_phys(fluid_state.theta_hat)
        E0v = calc.to_phys(fluid_state.E_hat)
        B0v = calc.to_phys(fluid_state.B_hat)
        n0v = calc.to_phys(fluid_state.n_hat)

        # values first, then evolution-equation time derivatives
        gradn0 = np.stack([calc._dx(n0v, i) for i in range(3)])
        j0v = n0v * u0v + sigma * (-0.5 * gradn0 + E0v
                                   + np.cross(u0v, B0v, axis=0))
        lap = lambda a: g.ifft(-g.ksq * g.fft(a))
        conv = lambda w, f: sum(w[j] * calc._dx(f, j) for j in range(3))
        th0_dot = kappa * lap(th0v) - conv(u0v, th0v)
        adv_u = np.stack([conv(u0v, u0v[i]) for i in range(3)])
        force = -adv_u + 0.5 * n0v * E0v + 0.5 * np.cross(j0v, B0v, axis=0)
        force_hat = np.stack([g.fft(f) for f in force])
        u0_dot = (calc.to_phys(g.leray(force_hat))
                  + mu * np.stack([lap(u0v[i]) for i in range(3)]))
        E0_dot = calc.to_phys(g.curl(fluid_state.B_hat)) - j0v
        B0_dot = -calc.to_phys(g.curl(fluid_state.E_hat))

        self.u0 = fa.TField(u0v, u0_dot)
        self.th0 = fa.TField(th0v, th0_dot)
        self.E0 = fa.TField(E0v, E0_dot)
        self.B0 = fa.TField(B0v, B0_dot)
        self.n0 = calc.div(self.E0)
        self.j0 = (self.n0 * self.u0
                   + sigma * (-0.5 * calc.grad(self.n0) + self.E0
                              + fa.cross(self.u0, self.B0)))
        self.W = (-0.5 * calc.grad(self.n0) + self.E0
                  + fa.cross(self.u0, self.B0))

        # corrector scalars: phi, u1, rho1 = theta1 as TFields
        th_dot_tf = kappa * calc.lap(self.th0) - fa.dot(self.u0,
                                                        calc.grad(self.th0))
        self.phi = calc.poisson_mean_free(th_dot_tf)
        self.u1b = calc.grad(self.phi)
        usq = fa.dot(self.u0, self.u0)
        adv_tf = fa.stack([fa.dot(self.u0, calc.grad(self.u0[i]))
                           for i in range(3)])
        rhs = ((1.0 / 6.0) * calc.lap(usq)
               - 0.5 * calc.div(adv_tf - 0.5 * (self.n0 * self.E0)
                                - 0.5 * fa.cross(self.j0, self.B0)))
        self.th1b = calc.poisson_mean_free(rhs)

        # corrector electromagnetic pair; dt of E1 requires j1, supplied by
        # the registry moment sum once the coefficient values exist
        E1v = calc.to_phys(corr_state.E1_hat)
        B1v = calc.to_phys(corr_state.B1_hat)
        B1_dot = -calc.to_phys(g.curl(corr_state.E1_hat))
        self.B1b = fa.TField(B1v, B1_dot)
        self.E1b = fa.TField(E1v, np.zeros_like(E1v))
        self._E1_curlB = calc.to_phys(g.curl(corr_state.B1_hat))
        self._set_corrector_derived()
        if j1_value_fn is not None:
            self.finalize_with_j1(j1_value_fn(self))

    def _set_corrector_derived(self):
        self.n1b = self.calc.div(self.E1b)
        self.Wbar = (-0.5 * self.calc.grad(self.n1b) + self.E1b
                     + fa.cross(self.u0, self.B1b)
                     + fa.cross(self.u1b, self.B0))

    def finalize_with_j1(self, j1_value):
        """Install dt of E1 once the Ohm current value is known."""
        self.E1b = fa.TField(self.E1b.v, self._E1_curlB - j1_value)
        self._set_corrector_derived()


# ---------------------------------------------------------------------------
# Term registry


class Term:
    def __init__(self, name, level, side, coeff_fn, shape_key, core=False):
        self.name = name
        self.level = level          # 0, 1, 2
        self.side = side            # "sym" or "anti"
        self.coeff_fn = coeff_fn    # ctx -> TField, leading index axes
        self.shape_key = shape_key  # key into the shapes dict
        self.core = core

    def coefficient(self, ctx):
        return self.coeff_fn(ctx)


def _sc(x):
    """Promote a float to a 0-index coefficient."""
    return x


def registry():
    """The full term list for levels 0, 1, 2."""
    c = fa.const
    terms = []
    add = lambda *a, **k: terms.append(Term(*a, **k))

    # ---- level 0 ----
    add("g0_rho", 0, "sym", lambda ctx: -ctx.th0, "one", core=True)
    add("g0_u", 0, "sym", lambda ctx: ctx.u0, "v", core=True)
    add("g0_theta", 0, "sym", lambda ctx: ctx.th0, "X", core=True)
    add("g0_n", 0, "anti", lambda ctx: 0.5 * ctx.n0, "one", core=True)

    # ---- level 1, symmetric ----
    add("g1s_rho", 1, "sym", lambda ctx: ctx.th1b, "one", core=True)
    add("g1s_u", 1, "sym", lambda ctx: ctx.u1b, "v", core=True)
    add("g1s_theta", 1, "sym", lambda ctx: ctx.th1b, "X", core=True)
    add("g1s_uu_A", 1, "sym",
        lambda ctx: 0.5 * fa.outer(ctx.u0, ctx.u0), "A", core=True)
    add("g1s_thu_B", 1, "sym", lambda ctx: ctx.th0 * ctx.u0, "B", core=True)
    add("g1s_thth_C", 1, "sym",
        lambda ctx: 0.5 * ctx.th0 * ctx.th0, "C", core=True)
    add("g1s_gradu_Ahat", 1, "sym",
        lambda ctx: -0.5 * ctx.calc.jac(ctx.u0), "Ahat", core=True)
    add("g1s_gradth_Bhat", 1, "sym",
        lambda ctx: -0.5 * ctx.calc.grad(ctx.th0), "Bhat", core=True)

    # ---- level 1, antisymmetric ----
    add("g1a_n", 1, "anti", lambda ctx: 0.5 * ctx.n1b, "one", core=True)
    add("g1a_nu", 1, "anti", lambda ctx: 0.5 * ctx.n0 * ctx.u0, "v",
        core=True)
    add("g1a_nth", 1, "anti", lambda ctx: 0.5 * ctx.n0 * ctx.th0, "X",
        core=True)
    add("g1a_W_Phit", 1, "anti", lambda ctx: ctx.W, "Phit", core=True)

    # ---- level 2, symmetric core ----
    add("g2s_uu1_A", 2, "sym",
        lambda ctx: fa.outer(ctx.u0, ctx.u1b), "A", core=True)
    add("g2s_B_mix", 2, "sym",
        lambda ctx: ctx.th0 * ctx.u1b + ctx.th1b * ctx.u0, "B", core=True)
    add("g2s_C_mix", 2, "sym",
        lambda ctx: ctx.th0 * ctx.th1b, "C", core=True)
    add("g2s_gradu1_Ahat", 2, "sym",
        lambda ctx: -0.5 * ctx.calc.jac(ctx.u1b), "Ahat", core=True)
    add("g2s_gradth1_Bhat", 2, "sym",
        lambda ctx: -0.5 * ctx.calc.grad(ctx.th1b), "Bhat", core=True)

    # ---- level 2, symmetric registry (neutral-background family) ----
    add("yp_th_gradu_Ahat", 2, "sym",
        lambda ctx: -1.25 * ctx.th0 * ctx.calc.jac(ctx.u0), "Ahat")
    add("yp_th_gradth_Bhat", 2, "sym",
        lambda ctx: -1.25 * ctx.th0 * ctx.calc.grad(ctx.th0), "Bhat")
    add("yp_th_uu_A", 2, "sym",
        lambda ctx: 1.25 * ctx.th0 * fa.outer(ctx.u0, ctx.u0), "A")
    add("yp_thth_u_B", 2, "sym",
        lambda ctx: 2.5 * ctx.th0 * ctx.th0 * ctx.u0, "B")
    add("yp_ththth_C", 2, "sym",
        lambda ctx: 1.25 * ctx.th0 * ctx.th0 * ctx.th0, "C")
    add("yp_BW_rotPhi", 2, "sym",
        lambda ctx: -0.5 * fa.outer(ctx.B0, ctx.W), "rotPhi_inv")
    add("yp_uuu_qvA", 2, "sym",
        lambda ctx: 0.5 * fa.TField(
            np.einsum("m...,l...,n...->mln...", ctx.u0.v, ctx.u0.v, ctx.u0.v),
            np.einsum("m...,l...,n...->mln...", ctx.u0.d, ctx.u0.v, ctx.u0.v)
            + np.einsum("m...,l...,n...->mln...", ctx.u0.v, ctx.u0.d, ctx.u0.v)
            + np.einsum("m...,l...,n...->mln...", ctx.u0.v, ctx.u0.v,
                        ctx.u0.d)), "qvA_inv")
    add("yp_thuu_qvB", 2, "sym",
        lambda ctx: ctx.th0 * fa.outer(ctx.u0, ctx.u0), "qvB_inv")
    add("yp_u_gradu_qvAhat", 2, "sym",
        lambda ctx: -0.5 * fa.TField(
            np.einsum("m...,ln...->mln...", ctx.u0.v,
                      ctx.calc.jac(ctx.u0).v),
            np.einsum("m...,ln...->mln...", ctx.u0.d,
                      ctx.calc.jac(ctx.u0).v)
            + np.einsum("m...,ln...->mln...", ctx.u0.v,
                        ctx.calc.jac(ctx.u0).d)), "qvAhat_inv")
    add("yp_ththu_qvC", 2, "sym",
        lambda ctx: 0.5 * ctx.th0 * ctx.th0 * ctx.u0, "qvC_inv")
    add("yp_u_gradth_qvBhat", 2, "sym",
        lambda ctx: -0.5 * fa.outer(ctx.u0, ctx.calc.grad(ctx.th0)),
        "qvBhat_inv")
    add("yp_thuu_qvsqA", 2, "sym",
        lambda ctx: 0.25 * ctx.th0 * fa.outer(ctx.u0, ctx.u0), "qvsqA_inv")
    add("yp_ththu_qvsqB", 2, "sym",
        lambda ctx: 0.5 * ctx.th0 * ctx.th0 * ctx.u0, "qvsqB_inv")
    add("yp_ththth_qvsqC", 2, "sym",
        lambda ctx: 0.25 * ctx.th0 * ctx.th0 * ctx.th0, "qvsqC_inv")
    add("yp_th_gradu_qvsqAhat", 2, "sym",
        lambda ctx: -0.25 * ctx.th0 * ctx.calc.jac(ctx.u0), "qvsqAhat_inv")
    add("yp_th_gradth_qvsqBhat", 2, "sym",
        lambda ctx: -0.25 * ctx.th0 * ctx.calc.grad(ctx.th0), "qvsqBhat_inv")
    add("yp_gradthsq_vC", 2, "sym",
        lambda ctx: -0.25 * ctx.calc.grad(ctx.th0 * ctx.th0), "vC_inv")
    add("yp_graduu_vA", 2, "sym",
        lambda ctx: -0.25 * _grad_outer(ctx, ctx.u0, ctx.u0), "vA_inv")
    add("yp_gradthu_vB", 2, "sym",
        lambda ctx: -0.5 * _grad_scalvec(ctx, ctx.th0, ctx.u0), "vB_inv")
    add("yp_hessu_vAhat", 2, "sym",
        lambda ctx: 0.25 * ctx.calc.jac2(ctx.u0), "vAhat_inv")
    add("yp_hessth_vBhat", 2, "sym",
        lambda ctx: 0.25 * ctx.calc.grad2(ctx.th0), "vBhat_inv")

    # ---- level 2, antisymmetric core ----
    add("g2a_Wbar_Phit", 2, "anti", lambda ctx: ctx.Wbar, "Phit", core=True)
    add("g2a_n1u_q1v", 2, "anti",
        lambda ctx: ctx.n1b * ctx.u0, "q1v_inv", core=True)
    add("g2a_n1th_q1vsq", 2, "anti",
        lambda ctx: 0.5 * ctx.n1b * ctx.th0, "q1vsq_inv", core=True)

    # ---- level 2, antisymmetric registry ----
    add("ym_gradnth_Phit", 2, "anti",
        lambda ctx: -0.5 * ctx.calc.grad(ctx.n0 * ctx.th0), "Phit")
    add("ym_thE_Phit", 2, "anti",
        lambda ctx: -1.0 * ctx.th0 * ctx.E0, "Phit")
    add("ym_gradnu_llA", 2, "anti",
        lambda ctx: -0.5 * _grad_scalvec(ctx, ctx.n0, ctx.u0), "llA_inv")
    add("ym_divnu_Psit", 2, "anti",
        lambda ctx: (-1.0 / 3.0) * ctx.calc.div(ctx.n0 * ctx.u0), "Psit")
    add("ym_Eu_Psit", 2, "anti",
        lambda ctx: (2.0 / 3.0) * fa.dot(ctx.E0, ctx.u0), "Psit")
    add("ym_gradnth_llB", 2, "anti",
        lambda ctx: -0.5 * ctx.calc.grad(ctx.n0 * ctx.th0), "llB_inv")
    add("ym_gradW_vPhi", 2, "anti",
        lambda ctx: -1.0 * _jac_vec(ctx, ctx.W), "vPhi_inv")
    add("ym_uxB_u_llA", 2, "anti",
        lambda ctx: fa.outer(fa.cross(ctx.u0, ctx.B0), ctx.u0), "llA_inv")
    add("ym_th_uxB_llB", 2, "anti",
        lambda ctx: ctx.th0 * fa.cross(ctx.u0, ctx.B0), "llB_inv")
    add("ym_B_gradu_rotAhat", 2, "anti",
        lambda ctx: 0.5 * _outer_scalar_jac(ctx, ctx.B0, ctx.u0),
        "rotAhat_ll_inv")
    add("ym_B_gradth_rotBhat", 2, "anti",
        lambda ctx: 0.5 * fa.outer(ctx.B0, ctx.calc.grad(ctx.th0)),
        "rotBhat_ll_inv")
    add("ym_Eu_llA", 2, "anti",
        lambda ctx: fa.outer(ctx.E0, ctx.u0), "llA_inv")
    add("ym_thE_llB", 2, "anti",
        lambda ctx: ctx.th0 * ctx.E0, "llB_inv")
    add("ym_nu1_q1v", 2, "anti",
        lambda ctx: ctx.n0 * ctx.u1b, "q1v_inv")
    add("ym_nth1_q1vsq", 2, "anti",
        lambda ctx: 0.5 * ctx.n0 * ctx.th1b, "q1vsq_inv")
    add("ym_nuu_q1A", 2, "anti",
        lambda ctx: 0.5 * ctx.n0 * fa.outer(ctx.u0, ctx.u0), "q1A_inv")
    add("ym_nthu_q1B", 2, "anti",
        lambda ctx: ctx.n0 * ctx.th0 * ctx.u0, "q1B_inv")
    add("ym_nthth_q1C", 2, "anti",
        lambda ctx: 0.5 * ctx.n0 * ctx.th0 * ctx.th0, "q1C_inv")
    add("ym_n_gradu_q1Ahat", 2, "anti",
        lambda ctx: -0.5 * ctx.n0 * ctx.calc.jac(ctx.u0), "q1Ahat_inv")
    add("ym_n_gradth_q1Bhat", 2, "anti",
        lambda ctx: -0.5 * ctx.n0 * ctx.calc.grad(ctx.th0), "q1Bhat_inv")
    add("ym_nthu_q1v", 2, "anti",
        lambda ctx: ctx.n0 * ctx.th0 * ctx.u0, "q1v_inv")
    add("ym_nthth_q1vsq", 2, "anti",
        lambda ctx: 0.5 * ctx.n0 * ctx.th0 * ctx.th0, "q1vsq_inv")
    add("ym_nuu_LA", 2, "anti",
        lambda ctx: 0.5 * ctx.n0 * fa.outer(ctx.u0, ctx.u0), "LA_ll_inv")
    add("ym_nthu_LB", 2, "anti",
        lambda ctx: ctx.n0 * ctx.th0 * ctx.u0, "LB_ll_inv")
    add("ym_nthth_LC", 2, "anti",
        lambda ctx: 0.5 * ctx.n0 * ctx.th0 * ctx.th0, "LC_ll_inv")
    add("ym_thW_qPhiOne", 2, "anti",
        lambda ctx: -2.0 * ctx.th0 * ctx.W, "qPhiOne_inv")
    add("ym_Wu_qPhiV", 2, "anti",
        lambda ctx: 2.0 * fa.outer(ctx.W, ctx.u0), "qPhiV_inv")
    add("ym_thW_qPhiX", 2, "anti",
        lambda ctx: 2.0 * ctx.th0 * ctx.W, "qPhiX_inv")
    return terms


def _grad_outer(ctx, a, b):
    """[l, m, n] = d_l (a_m b_n)."""
    ab = fa.outer(a, b)
    return fa.TField(
        np.stack([np.stack([np.stack([ctx.calc._dx(ab.v[m, n], l)
                                      for n in range(3)]) for m in range(3)])
                  for l in range(3)]),
        np.stack([np.stack([np.stack([ctx.calc._dx(ab.d[m, n], l)
                                      for n in range(3)]) for m in range(3)])
                  for l in range(3)]))


def _grad_scalvec(ctx, a, b):
    """[l, m] = d_l (a b_m)."""
    ab = a * b
    return ctx.calc.jac(ab)


def _jac_vec(ctx, a):
    """[l, m] = d_l a_m."""
    return ctx.calc.jac(a)


def _outer_scalar_jac(ctx, B, u):
    """[b, l, m] = B_b d_l u_m."""
    J = ctx.calc.jac(u)
    return fa.TField(np.einsum("b...,lm...->blm...", B.v, J.v),
                     np.einsum("b...,lm...->blm...", B.d, J.v)
                     + np.einsum("b...,lm...->blm...", B.v, J.d))


def term_moments(term, shapes, basis):
    """(U, C) moments of one anti-side term's shape: U_m = 2 <s v_m>,
    C = 2 <s (|v|^2/3 - 1)>, per leading index of the shape."""
    s = shapes[term.shape_key]
    vv = vel.coeffs_v(basis)
    chi = vel.coeffs_chi(basis)
    U = 2.0 * np.einsum("...n,mn->...m", s, vv)
    C = (4.0 / 3.0) * np.einsum("...n,n->...", s, chi)
    return U, C
