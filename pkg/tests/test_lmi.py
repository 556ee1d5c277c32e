import io

import numpy as np
import numpy.testing as npt
import pytest

from lmihorizon import conic, lmi, model

from conftest import random_nominal_problem


def nominal_toy(n=1, m=1, horizon=2):
    """Zero-dynamics instance: A = 0, B1 = 0, f = 0, y = u."""
    stage = model.StageData(
        f=np.zeros(n),
        A=np.zeros((n, n)),
        B1=np.zeros((n, m)),
        B2=np.zeros((n, 0)),
        g1=np.zeros(m),
        C1=np.zeros((m, n)),
        D11=np.eye(m),
        D12=np.zeros((m, 0)),
        constraints=((np.zeros(1), np.zeros((1, n)), 0.5 * np.ones((1, m))),),
        g3=np.zeros(0),
        C3=np.zeros((0, n)),
        D31=np.zeros((0, m)),
        D32=np.zeros((0, 0)),
    )
    return model.Problem(
        stages=(stage,) * (horizon + 1),
        x_bar=np.zeros(n),
        cone=model.MultiplierCone(()),
        kind=model.NOMINAL_FINITE,
        Pf=np.eye(1 + n),
    )


def set_point(layout, assignments):
    x = np.zeros(layout.dim)
    for key, val in assignments.items():
        layout.set(x, key, val)
    return x


def test_svec_roundtrip_and_inner_product():
    rng = np.random.default_rng(0)
    for d in (1, 2, 5):
        A = rng.standard_normal((d, d))
        A = 0.5 * (A + A.T)
        B = rng.standard_normal((d, d))
        B = 0.5 * (B + B.T)
        npt.assert_allclose(lmi.smat(lmi.svec(A), d), A, atol=1e-14)
        npt.assert_allclose(lmi.svec(A) @ lmi.svec(B), np.trace(A @ B), atol=1e-12)


def test_layout_offsets_contiguous():
    prob = model.build_example(0.1, 0.1, horizon=2)
    layout = lmi.DecisionLayout(prob)
    entries = sorted((layout.entry(k).offset, layout.entry(k).size) for k in layout.keys())
    pos = 0
    for off, size in entries:
        assert off == pos
        pos += size
    assert pos == layout.dim


def test_layout_get_set_roundtrip():
    rng = np.random.default_rng(1)
    prob = model.build_example(0.1, 0.1, horizon=1)
    layout = lmi.DecisionLayout(prob)
    x = np.zeros(layout.dim)
    P = rng.standard_normal((3, 3))
    P = 0.5 * (P + P.T)
    K = rng.standard_normal((1, 3))
    layout.set(x, ("P", 1), P)
    layout.set(x, ("K", 0), K)
    layout.set(x, "nu", 2.5)
    npt.assert_allclose(layout.get(x, ("P", 1)), P, atol=1e-14)
    npt.assert_allclose(layout.get(x, ("K", 0)), K)
    assert layout.get(x, "nu") == 2.5


def test_blocks_are_affine():
    rng = np.random.default_rng(2)
    prob = model.build_example(0.2, 0.1, horizon=1, x_bar=(1.0, -1.0))
    program = lmi.assemble_program(prob)
    x = rng.standard_normal(program.num_vars)
    for b in program.blocks:
        lhs = b.evaluate(2.0 * x)
        rhs = 2.0 * b.evaluate(x) - b.g0
        npt.assert_allclose(lhs, rhs, atol=1e-12)


def test_all_psd_blocks_symmetric():
    prob = model.build_example(0.2, 0.1, horizon=2)
    program = lmi.assemble_program(prob)
    for b in program.blocks:
        if b.sense == "psd":
            npt.assert_allclose(b.g0, b.g0.T, atol=0)
            for _, C in b.terms:
                npt.assert_allclose(C, C.T, atol=0)


def test_nominal_cost_block_zero_dynamics():
    prob = nominal_toy()
    layout = lmi.DecisionLayout(prob)
    blk = lmi.build_cost_lmi_nominal(prob, layout, 0)
    assert blk.dim == 2 * 2 + 1  # 2(1+n) + p
    x = set_point(layout, {("P", 0): np.eye(2), ("P", 1): np.eye(2)})
    G = blk.evaluate(x)
    expected = np.eye(5)
    expected[0, 3] = expected[3, 0] = 1.0  # first row of Pt_k couples the corners
    npt.assert_allclose(G, expected, atol=1e-14)
    # PSD with a zero eigenvalue along the coupled constant slots
    eigs = np.linalg.eigvalsh(G)
    assert eigs[0] >= -1e-12
    assert abs(eigs[0]) <= 1e-12


def test_nominal_cost_block_has_no_nu_term():
    prob = nominal_toy()
    layout = lmi.DecisionLayout(prob)
    blk = lmi.build_cost_lmi_nominal(prob, layout, 1)
    nu_idx = layout.scalar_index("nu")
    assert all(j != nu_idx for j, _ in blk.terms)


def test_initial_block_origin():
    prob = model.build_example(0.1, 0.1, x_bar=(0.0, 0.0))
    S0 = lmi.sqrt_sigma0(prob.x_bar)
    expected = np.zeros((3, 3))
    expected[0, 0] = 1.0
    npt.assert_allclose(S0, expected, atol=1e-15)


def test_initial_block_sqrt_squares_to_sigma():
    x_bar = np.array([2.0, 3.0])
    S0 = lmi.sqrt_sigma0(x_bar)
    v = np.array([1.0, 2.0, 3.0])
    npt.assert_allclose(S0, np.outer(v, v) / np.sqrt(14.0), atol=1e-14)
    npt.assert_allclose(S0 @ S0, np.outer(v, v), atol=1e-12)


def test_initial_block_decouples_at_zero_nu():
    rng = np.random.default_rng(3)
    prob = model.build_example(0.1, 0.1, x_bar=(2.0, 3.0))
    layout = lmi.DecisionLayout(prob)
    init, trace = lmi.build_initial_lmi(prob, layout)
    P0 = np.eye(3) + 0.1
    Z = 2.0 * np.eye(3)
    x = set_point(layout, {("P", 0): P0, "Z": Z, "nu": 0.0})
    G = init.evaluate(x)
    npt.assert_allclose(G[:3, :3], P0, atol=1e-14)
    npt.assert_allclose(G[3:, 3:], Z, atol=1e-14)
    npt.assert_allclose(G[:3, 3:], 0.0, atol=1e-15)
    # trace block: nu - trace Z
    assert abs(trace.evaluate(x)[0, 0] - (0.0 - 6.0)) <= 1e-14


def test_terminal_block_identity_and_feasibility():
    prob = model.build_example(0.1, 0.1, kind=model.NOMINAL_FINITE, pf=np.eye(3))
    layout = lmi.DecisionLayout(prob)
    blk = lmi.build_terminal_lmi(prob, layout)
    x = set_point(layout, {("P", 0): 0.3 * np.eye(3)})
    npt.assert_allclose(blk.evaluate(x), np.eye(3) - 0.3 * np.eye(3), atol=1e-14)
    prob2 = model.build_example(0.1, 0.1, kind=model.NOMINAL_FINITE, pf=2.0 * np.eye(3))
    blk2 = lmi.build_terminal_lmi(prob2, lmi.DecisionLayout(prob2))
    ok = blk2.evaluate(set_point(layout, {("P", 0): 0.4 * np.eye(3)}))
    bad = blk2.evaluate(set_point(layout, {("P", 0): 0.6 * np.eye(3)}))
    assert np.linalg.eigvalsh(ok)[0] >= 0.0999
    assert np.linalg.eigvalsh(bad)[0] <= -0.0999


def test_terminal_block_rank_one_update_constant():
    t = 100.0
    d = 3
    Pf = np.diag([2.0, 3.0, 4.0])
    e1 = np.zeros(d)
    e1[0] = 1.0
    shifted = Pf + t * np.outer(e1, e1)
    prob = model.build_example(0.1, 0.1, kind=model.NOMINAL_FINITE, pf=shifted)
    layout = lmi.DecisionLayout(prob)
    blk = lmi.build_terminal_lmi(prob, layout)
    Pfi = np.linalg.inv(Pf)
    sm = Pfi - (t / (1.0 + t * Pfi[0, 0])) * np.outer(Pfi[:, 0], Pfi[0, :])
    npt.assert_allclose(blk.evaluate(np.zeros(layout.dim)), sm, atol=1e-12)


def test_terminal_block_singular_rejected():
    prob = model.build_example(0.1, 0.1, kind=model.NOMINAL_FINITE, pf=np.diag([1.0, 1.0, 0.0]))
    # bypass model validation (Pf is PSD but singular)
    layout = lmi.DecisionLayout(prob)
    with pytest.raises(ValueError, match="ridge"):
        lmi.build_terminal_lmi(prob, layout)
    blk = lmi.build_terminal_lmi(prob, layout, ridge=1e-9)
    assert np.isfinite(blk.g0).all()


def test_constraint_block_scalar_determinant_condition():
    # n = 0: pure input constraint v = u/4; block [[pt, kt/4], [kt/4, nu]]
    stage = model.StageData(
        f=np.zeros(0),
        A=np.zeros((0, 0)),
        B1=np.zeros((0, 1)),
        B2=np.zeros((0, 0)),
        g1=np.zeros(1),
        C1=np.zeros((1, 0)),
        D11=np.eye(1),
        D12=np.zeros((1, 0)),
        constraints=((np.zeros(1), np.zeros((1, 0)), np.array([[0.25]])),),
        g3=np.zeros(0),
        C3=np.zeros((0, 0)),
        D31=np.zeros((0, 1)),
        D32=np.zeros((0, 0)),
    )
    prob = model.Problem(
        stages=(stage, stage),
        x_bar=np.zeros(0),
        cone=model.MultiplierCone(()),
        kind=model.NOMINAL_FINITE,
        Pf=np.eye(1),
    )
    layout = lmi.DecisionLayout(prob)
    blk = lmi.build_constraint_lmi(prob, layout, 0, 0)
    rng = np.random.default_rng(4)
    for _ in range(200):
        pt, kt, nu = rng.uniform(0.01, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(0.01, 3.0)
        x = set_point(layout, {("P", 0): [[pt]], ("K", 0): [[kt]], "nu": nu})
        G = blk.evaluate(x)
        npt.assert_allclose(G, [[pt, kt / 4.0], [kt / 4.0, nu]], atol=1e-14)
        assert (np.linalg.eigvalsh(G)[0] >= 0) == (pt * nu >= kt**2 / 16.0)


def test_constraint_block_congruence_with_recovered_variables():
    # the transformed peak block is PSD exactly when the recovered condition
    # P >= nu row' row holds (spot check by both-sides multiplication)
    rng = np.random.default_rng(5)
    prob, _ = random_nominal_problem(rng, horizon=1)
    layout = lmi.DecisionLayout(prob)
    st = prob.stages[0]
    for trial in range(50):
        W = rng.standard_normal((1 + prob.n, 1 + prob.n))
        Pt = W @ W.T + 0.1 * np.eye(1 + prob.n)
        Kt = rng.standard_normal((prob.m, 1 + prob.n))
        nu_t = rng.uniform(0.05, 2.0)
        x = set_point(layout, {("P", 0): Pt, ("K", 0): Kt, "nu": nu_t})
        for i in range(prob.s):
            blk = lmi.build_constraint_lmi(prob, layout, 0, i)
            lmi_margin = np.linalg.eigvalsh(blk.evaluate(x))[0]
            P = np.linalg.inv(Pt)
            K = Kt @ P
            nu = 1.0 / nu_t
            g2, C2, D21 = st.constraints[i]
            row = np.hstack([g2[:, None], C2, D21]) @ np.vstack([np.eye(1 + prob.n), K])
            orig = P - nu * row.T @ row
            orig_margin = np.linalg.eigvalsh(orig)[0]
            if abs(lmi_margin) > 1e-9 and abs(orig_margin) > 1e-9:
                assert (lmi_margin > 0) == (orig_margin > 0)


def test_cost_block_congruence_nominal():
    # transformed decrease block PSD <=> original decrease condition <= 0
    rng = np.random.default_rng(6)
    hits = 0
    while hits < 40:
        prob, _ = random_nominal_problem(rng, horizon=1)
        layout = lmi.DecisionLayout(prob)
        d = 1 + prob.n
        W1 = rng.standard_normal((d, d))
        W2 = rng.standard_normal((d, d))
        Pt0 = W1 @ W1.T + 0.05 * np.eye(d)
        Pt1 = W2 @ W2.T + 0.05 * np.eye(d)
        Kt = rng.standard_normal((prob.m, d))
        x = set_point(layout, {("P", 0): Pt0, ("P", 1): Pt1, ("K", 0): Kt})
        blk = lmi.build_cost_lmi_nominal(prob, layout, 0)
        lmi_margin = np.linalg.eigvalsh(blk.evaluate(x))[0]
        P0, P1 = np.linalg.inv(Pt0), np.linalg.inv(Pt1)
        K = Kt @ P0
        st = prob.stages[0]
        T = np.vstack([np.eye(d), K])
        fa = np.hstack([st.f[:, None], st.A, st.B1]) @ T
        L = np.vstack([np.eye(1, d), fa])
        Y = np.hstack([st.g1[:, None], st.C1, st.D11]) @ T
        F = -P0 + L.T @ P1 @ L + Y.T @ Y
        orig_margin = -np.linalg.eigvalsh(F)[-1]
        if abs(lmi_margin) > 1e-9 and abs(orig_margin) > 1e-9:
            assert (lmi_margin > 0) == (orig_margin > 0)
            hits += 1


def robust_example_vars(rng, prob, layout, k):
    d = 1 + prob.n
    W1 = rng.standard_normal((d, d))
    W2 = rng.standard_normal((d, d))
    vals = {
        ("P", k): W1 @ W1.T + 0.05 * np.eye(d),
        ("P", k + 1): W2 @ W2.T + 0.05 * np.eye(d),
        ("K", k): rng.standard_normal((prob.m, d)),
        ("e", k): rng.uniform(0.1, 3.0, size=prob.cone.num_channels),
    }
    return vals


def test_robust_cost_block_dualization():
    # transformed robust block PSD <=> S-procedure decrease form <= 0 with
    # the recovered variables (P, K, M); sampled around a solved certificate
    # so both outcomes occur
    rng = np.random.default_rng(7)
    prob = model.build_example(0.3, 0.1, horizon=1, x_bar=(1.0, 1.0))
    program = lmi.assemble_program(prob)
    base = conic.solve(program).x
    layout = program.layout
    blk = lmi.build_robust_cost_lmi(prob, layout, 0)
    st = prob.stages[0]
    d = 1 + prob.n
    hits_pos = hits_neg = 0
    for _ in range(400):
        x = base + rng.choice([1e-3, 1e-1]) * rng.standard_normal(layout.dim)
        vals = {
            ("P", 0): layout.get(x, ("P", 0)),
            ("P", 1): layout.get(x, ("P", 1)),
            ("K", 0): layout.get(x, ("K", 0)),
            ("e", 0): layout.get(x, ("e", 0)),
        }
        if np.linalg.eigvalsh(vals[("P", 0)])[0] <= 1e-8:
            continue
        if np.linalg.eigvalsh(vals[("P", 1)])[0] <= 1e-8:
            continue
        if np.any(vals[("e", 0)] <= 1e-8):
            continue
        x = set_point(layout, vals)
        lmi_margin = np.linalg.eigvalsh(blk.evaluate(x))[0]
        P0 = np.linalg.inv(vals[("P", 0)])
        P1 = np.linalg.inv(vals[("P", 1)])
        K = vals[("K", 0)] @ P0
        M = model.recover_multiplier(prob.cone, vals[("e", 0)])
        T = np.vstack([np.eye(d), K])
        fa = np.hstack([st.f[:, None], st.A, st.B1]) @ T
        L = np.vstack([np.eye(1, d), fa])
        Y = np.hstack([st.g1[:, None], st.C1, st.D11]) @ T
        Zr = np.hstack([st.g3[:, None], st.C3, st.D31]) @ T
        l = prob.l
        sel = np.hstack([np.eye(d), np.zeros((d, l))])
        Lw = np.hstack([L, np.vstack([np.zeros((1, l)), st.B2])])
        Yw = np.hstack([Y, st.D12])
        Zw = np.hstack([Zr, st.D32])
        Wsel = np.hstack([np.zeros((l, d)), np.eye(l)])
        J = np.vstack([Zw, Wsel])
        F = -sel.T @ P0 @ sel + Lw.T @ P1 @ Lw + Yw.T @ Yw + J.T @ M @ J
        orig_margin = -np.linalg.eigvalsh(F)[-1]
        if abs(lmi_margin) > 1e-9 and abs(orig_margin) > 1e-9:
            assert (lmi_margin > 0) == (orig_margin > 0)
            if lmi_margin > 0:
                hits_pos += 1
            else:
                hits_neg += 1
    assert hits_pos > 5 and hits_neg > 5


def test_robust_block_without_channels_equals_nominal():
    rng = np.random.default_rng(8)
    for _ in range(20):
        prob, _ = random_nominal_problem(rng, horizon=1)
        robust = model.Problem(
            stages=prob.stages, x_bar=prob.x_bar, cone=prob.cone,
            kind=model.ROBUST_FINITE, Pf=prob.Pf,
        )
        layout = lmi.DecisionLayout(robust)
        a = lmi.build_cost_lmi_nominal(robust, layout, 0)
        b = lmi.build_robust_cost_lmi(robust, layout, 0)
        npt.assert_allclose(a.g0, b.g0, atol=1e-14)
        ta = dict(a.terms)
        tb = dict(b.terms)
        assert set(ta) == set(tb)
        for j in ta:
            npt.assert_allclose(ta[j], tb[j], atol=1e-14)


def test_robust_block_zero_disturbance_columns_matches_nominal_feasibility():
    # B2 = 0, D12 = 0, D32 = 0: the channel has no effect, so feasibility
    # of the robust program coincides with the nominal one
    rng = np.random.default_rng(9)
    base, _ = random_nominal_problem(rng, horizon=1)
    l = 2
    stages = tuple(
        model.StageData(
            f=st.f, A=st.A, B1=st.B1,
            B2=np.zeros((base.n, l)),
            g1=st.g1, C1=st.C1, D11=st.D11,
            D12=np.zeros((base.p, l)),
            constraints=st.constraints,
            g3=np.zeros(l),
            C3=rng.standard_normal((l, base.n)),
            D31=rng.standard_normal((l, base.m)),
            D32=np.zeros((l, l)),
        )
        for st in base.stages
    )
    cone = model.MultiplierCone(((1, 0.5), (1, 0.5)))
    robust = model.Problem(stages=stages, x_bar=base.x_bar, cone=cone,
                           kind=model.ROBUST_FINITE, Pf=base.Pf)
    t_nom, _ = conic.feasibility_margin(lmi.assemble_program(base))
    t_rob, _ = conic.feasibility_margin(lmi.assemble_program(robust))
    assert (t_nom > 1e-9) == (t_rob > 1e-9)
    # and an infeasible variant stays infeasible: push the start far out
    far = base.with_initial_state(100.0 * np.ones(base.n))
    far_rob = model.Problem(stages=stages, x_bar=far.x_bar, cone=cone,
                            kind=model.ROBUST_FINITE, Pf=base.Pf)
    t1, _ = conic.feasibility_margin(lmi.assemble_program(far))
    t2, _ = conic.feasibility_margin(lmi.assemble_program(far_rob))
    assert t1 <= 1e-9 and t2 <= 1e-9


def test_robust_multiplier_terms_stay_in_scaled_corner():
    prob = model.build_example(0.3, 0.1, horizon=1)
    layout = lmi.DecisionLayout(prob)
    blk = lmi.build_robust_cost_lmi(prob, layout, 0)
    top = 1 + prob.n + prob.p + prob.q
    for k in range(layout.num_channels):
        j = layout.vec_index(("e", 0), k)
        C = dict(blk.terms)[j]
        npt.assert_allclose(C[top:, :], 0.0, atol=0)
        npt.assert_allclose(C[:, top:], 0.0, atol=0)


def test_tail_block_stable_system_feasible():
    # contractive dynamics, zero cost rows, no uncertainty: the stationary
    # block admits Pt = alpha I for large alpha
    stage = model.StageData(
        f=np.zeros(2),
        A=0.5 * np.eye(2),
        B1=np.zeros((2, 1)),
        B2=np.zeros((2, 0)),
        g1=np.zeros(1),
        C1=np.zeros((1, 2)),
        D11=np.zeros((1, 1)),
        D12=np.zeros((1, 0)),
        constraints=((np.zeros(1), np.array([[0.1, 0.0]]), np.zeros((1, 1))),),
        g3=np.zeros(0),
        C3=np.zeros((0, 2)),
        D31=np.zeros((0, 1)),
        D32=np.zeros((0, 0)),
    )
    prob = model.Problem(stages=(stage,), x_bar=np.zeros(2),
                         cone=model.MultiplierCone(()), kind=model.ROBUST_INFINITE)
    t, _ = conic.feasibility_margin(lmi.assemble_program(prob))
    assert t > 1e-9


def test_tail_block_unstable_uncontrollable_infeasible():
    stage = model.StageData(
        f=np.zeros(1),
        A=np.array([[2.0]]),
        B1=np.zeros((1, 1)),
        B2=np.zeros((1, 0)),
        g1=np.zeros(1),
        C1=np.eye(1),
        D11=np.zeros((1, 1)),
        D12=np.zeros((1, 0)),
        constraints=((np.zeros(1), np.array([[0.5]]), np.zeros((1, 1))),),
        g3=np.zeros(0),
        C3=np.zeros((0, 1)),
        D31=np.zeros((0, 1)),
        D32=np.zeros((0, 0)),
    )
    prob = model.Problem(stages=(stage,), x_bar=np.array([0.5]),
                         cone=model.MultiplierCone(()), kind=model.ROBUST_INFINITE)
    for scale in ("identity", "nu"):
        t, _ = conic.feasibility_margin(lmi.assemble_program(prob, tail_scale=scale))
        assert t <= 1e-9


def test_tail_scale_variants_agree_at_unit_nu():
    prob = model.build_example(0.2, 0.1, horizon=0)
    layout = lmi.DecisionLayout(prob)
    a = lmi.build_infinite_tail_lmi(prob, layout, "identity")
    b = lmi.build_infinite_tail_lmi(prob, layout, "nu")
    rng = np.random.default_rng(10)
    x = rng.standard_normal(layout.dim)
    layout.set(x, "nu", 1.0)
    npt.assert_allclose(a.evaluate(x), b.evaluate(x), atol=1e-12)


def test_tail_deflation_splits_structural_kernel():
    prob = model.build_example(0.2, 0.1, horizon=0)
    layout = lmi.DecisionLayout(prob)
    tail = lmi.build_infinite_tail_lmi(prob, layout, "identity")
    xi = lmi.tail_kernel_direction(layout, prob.p, prob.q)
    # the quadratic form along xi vanishes identically
    assert abs(xi @ tail.g0 @ xi) <= 1e-14
    for _, C in tail.terms:
        assert abs(xi @ C @ xi) <= 1e-14
    psd, eq = lmi.deflate_structural_kernel(tail, xi)
    assert psd.sense == "psd" and eq.sense == "zero"
    assert psd.dim == tail.dim - 1
    # equivalence at a random point satisfying the kernel equality: build a
    # feasible-looking tail evaluation and compare PSD status
    rng = np.random.default_rng(11)
    x = rng.standard_normal(layout.dim)
    G = tail.evaluate(x)
    Gr = psd.evaluate(x)
    E = eq.evaluate(x)
    # when the kernel residual is zero, min eigs agree on the complement
    assert Gr.shape[0] == tail.dim - 1


def test_assemble_counts_nominal():
    prob = model.build_example(0.1, 0.1, horizon=2, kind=model.NOMINAL_FINITE, pf=np.eye(3))
    program = lmi.assemble_program(prob)
    names = [b.name for b in program.blocks]
    assert sum(n.startswith("cost[") for n in names) == 2
    assert sum(n.startswith("constraint[") for n in names) == 6
    assert names.count("initial") == 1 and names.count("trace") == 1
    assert names.count("terminal") == 1
    assert sum(n.startswith("P_pd") for n in names) == 3


def test_assemble_counts_robust_infinite_n0():
    prob = model.build_example(0.1, 0.1, horizon=0)
    program = lmi.assemble_program(prob)
    names = [b.name for b in program.blocks]
    assert sum(n.startswith("robust_cost") for n in names) == 0
    assert sum(n.startswith("constraint[") for n in names) == 3
    assert names.count("initial") == 1 and names.count("trace") == 1
    assert names.count("tail") == 1 and names.count("tail_kernel") == 1
    assert sum(n.startswith("P_pd") for n in names) == 1
    assert sum(n.startswith("e_pos") for n in names) == 2


def test_assemble_requires_valid_problem():
    prob = model.build_example(0.1, 0.1, kind=model.NOMINAL_FINITE, pf=np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        lmi.assemble_program(prob)


def test_dump_sparse_roundtrip():
    prob = model.build_example(0.1, 0.1, horizon=0)
    program = lmi.assemble_program(prob)
    buf = io.StringIO()
    program.dump_sparse(buf)
    rng = np.random.default_rng(12)
    x = rng.standard_normal(program.num_vars)
    rebuilt = {}
    for line in buf.getvalue().splitlines():
        bid, vid, r, c, val = line.split()
        bid, vid, r, c, val = int(bid), int(vid), int(r), int(c), float(val)
        G = rebuilt.setdefault(bid, {})
        M = G.setdefault(vid, {})
        M[(r, c)] = val
    for bid, b in enumerate(program.blocks):
        G = b.evaluate(x)
        acc = np.zeros_like(G)
        for vid, entries in rebuilt.get(bid, {}).items():
            w = 1.0 if vid < 0 else x[vid]
            for (r, c), val in entries.items():
                acc[r, c] += w * val
                if b.sense != "zero" and r != c:
                    acc[c, r] += w * val
        npt.assert_allclose(acc, G, atol=1e-12)
