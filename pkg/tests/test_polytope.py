import numpy as np
import pytest

from lmpckit import model, polytope, qp


def unit_box():
    return polytope.Polyhedron(np.vstack([np.eye(2), -np.eye(2)]), np.ones(4))


def state_box():
    return polytope.Polyhedron(np.vstack([np.eye(2), -np.eye(2)]), np.full(4, 15.0))


def double_integrator():
    return model.LinearSystem(A=[[1.0, 1.0], [0.0, 1.0]], B=[[0.0], [1.0]])


def random_polytope_2d(rng, n_cuts=4, radius=3.0):
    # box plus cuts that keep the origin inside
    H = np.vstack([np.eye(2), -np.eye(2), rng.standard_normal((n_cuts, 2))])
    h = np.concatenate([np.full(4, radius), rng.uniform(0.3, 2.0, n_cuts)])
    return polytope.Polyhedron(H, h)


def test_contains_examples():
    box = unit_box()
    assert polytope.contains(box, [0.0, 0.0])
    assert not polytope.contains(box, [1.0 + 2e-7, 0.0], tol=1e-7)
    assert polytope.contains(state_box(), [-14.0, 2.0])


def test_contains_dim_mismatch():
    with pytest.raises(ValueError):
        polytope.contains(unit_box(), [0.0, 0.0, 0.0])


def test_remove_redundancy_simple():
    P = polytope.Polyhedron([[1.0], [1.0]], [1.0, 2.0])
    R = polytope.remove_redundancy(P)
    assert R.nrows == 1
    assert R.h[0] == pytest.approx(1.0)


def test_remove_redundancy_duplicated_box():
    H = np.vstack([np.eye(2), -np.eye(2), np.eye(2), -np.eye(2)])
    h = np.ones(8)
    R = polytope.remove_redundancy(polytope.Polyhedron(H, h))
    assert R.nrows == 4


def test_remove_redundancy_membership_agreement():
    rng = np.random.default_rng(42)
    P = random_polytope_2d(rng, n_cuts=6)
    R = polytope.remove_redundancy(P)
    assert R.nrows <= P.nrows
    pts = rng.uniform(-4, 4, size=(10_000, 2))
    for z in pts:
        assert polytope.contains(P, z, 1e-9) == polytope.contains(R, z, 1e-9)


def test_remove_redundancy_empty():
    P = polytope.Polyhedron([[1.0], [-1.0]], [0.0, -1.0])
    with pytest.raises(polytope.EmptySetError):
        polytope.remove_redundancy(P)


def test_project_simplex_to_interval():
    P = polytope.Polyhedron([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]],
                            [1.0, 0.0, 0.0])
    proj = polytope.project_fm(P, [0])
    lo, _ = polytope.support(proj, [-1.0])
    hi, _ = polytope.support(proj, [1.0])
    assert -lo == pytest.approx(0.0, abs=1e-9)
    assert hi == pytest.approx(1.0, abs=1e-9)


def test_project_3d_box():
    H = np.vstack([np.eye(3), -np.eye(3)])
    h = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
    proj = polytope.project_fm(polytope.Polyhedron(H, h), [0, 1])
    verts = polytope.vertices_2d(proj)
    expect = {(1.0, 2.0), (1.0, -2.0), (-1.0, 2.0), (-1.0, -2.0)}
    got = {(round(v[0], 9), round(v[1], 9)) for v in verts}
    assert got == expect


def lift_witness(P, keep, p):
    """LP feasibility of a lift of p into P (the projection oracle)."""
    n = P.dim
    A_eq = np.zeros((len(keep), n))
    for r, k in enumerate(keep):
        A_eq[r, k] = 1.0
    sol = qp.solve_lp(np.zeros(n), A_eq=A_eq, b_eq=np.asarray(p, dtype=float),
                      A_in=P.H, b_in=P.h)
    return sol.status == qp.OPTIMAL


def test_projection_matches_lift_witness():
    rng = np.random.default_rng(3)
    for _ in range(10):
        H = np.vstack([np.eye(3), -np.eye(3), rng.standard_normal((4, 3))])
        h = np.concatenate([np.full(6, 2.0), rng.uniform(0.5, 2.0, 4)])
        P = polytope.Polyhedron(H, h)
        proj = polytope.project_fm(P, [0, 1])
        pts = rng.uniform(-2.5, 2.5, size=(100, 2))
        for p in pts:
            margin = np.abs(proj.H @ p - proj.h).min() if proj.nrows else 1.0
            if margin < 1e-6:
                continue
            assert polytope.contains(proj, p, 1e-7) == lift_witness(P, [0, 1], p)


def test_support_examples():
    box = unit_box()
    val, z = polytope.support(box, [1.0, 0.0])
    assert val == pytest.approx(1.0)
    val, z = polytope.support(box, [1.0, 1.0])
    assert val == pytest.approx(2.0)
    assert np.allclose(z, [1.0, 1.0], atol=1e-9)


def test_support_dominates_samples():
    rng = np.random.default_rng(11)
    P = random_polytope_2d(rng)
    d = rng.standard_normal(2)
    val, _ = polytope.support(P, d)
    hits = 0
    while hits < 1000:
        z = rng.uniform(-3, 3, 2)
        if polytope.contains(P, z):
            assert d @ z <= val + 1e-9
            hits += 1


def test_support_unbounded():
    P = polytope.Polyhedron([[1.0, 0.0]], [1.0])
    with pytest.raises(polytope.UnboundedSetError):
        polytope.support(P, [-1.0, 0.0])


def test_vertices_unit_box_ccw():
    verts = polytope.vertices_2d(unit_box())
    assert len(verts) == 4
    assert np.allclose(np.abs(verts), 1.0)
    # counter-clockwise: positive shoelace sum
    x, y = verts[:, 0], verts[:, 1]
    assert np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)) > 0
    # starts at the lexicographically smallest vertex
    assert np.allclose(verts[0], [-1.0, -1.0])


def test_vertices_triangle():
    P = polytope.Polyhedron([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]],
                            [0.0, 0.0, 1.0])
    verts = polytope.vertices_2d(P)
    got = {(round(v[0], 9), round(v[1], 9)) for v in verts}
    assert got == {(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)}


def test_vertices_state_box():
    verts = polytope.vertices_2d(state_box())
    assert {tuple(np.round(v, 6)) for v in verts} == \
        {(15.0, 15.0), (15.0, -15.0), (-15.0, 15.0), (-15.0, -15.0)}


def test_vertices_unbounded_raises():
    with pytest.raises(polytope.UnboundedSetError):
        polytope.vertices_2d(polytope.Polyhedron([[1.0, 0.0]], [1.0]))


def test_area_against_monte_carlo():
    rng = np.random.default_rng(5)
    for _ in range(5):
        P = random_polytope_2d(rng)
        verts = polytope.vertices_2d(P)
        area = polytope.polygon_area(verts)
        lo = verts.min(axis=0) - 0.1
        hi = verts.max(axis=0) + 0.1
        box_area = np.prod(hi - lo)
        samples = rng.uniform(lo, hi, size=(100_000, 2))
        inside = np.count_nonzero(np.all(samples @ P.H.T - P.h <= 0.0, axis=1))
        p_hat = inside / len(samples)
        mc = box_area * p_hat
        sigma = box_area * np.sqrt(p_hat * (1 - p_hat) / len(samples))
        assert abs(area - mc) <= 3 * sigma + 1e-9


def test_pre_set_of_origin_is_segment():
    sys = double_integrator()
    cons = model.box_constraints(15.0, 1.5)
    target = polytope.Polyhedron(np.vstack([np.eye(2), -np.eye(2)]), np.zeros(4))
    pre = polytope.pre_set(target, sys, cons)
    verts = polytope.vertices_2d(pre)
    got = {tuple(np.round(v, 7)) for v in verts}
    assert got == {(-1.5, 1.5), (1.5, -1.5)}


def test_pre_set_membership_matches_lp():
    sys = double_integrator()
    cons = model.box_constraints(15.0, 1.5)
    target = polytope.Polyhedron(np.vstack([np.eye(2), -np.eye(2)]), np.full(4, 3.0))
    pre = polytope.pre_set(target, sys, cons)
    rng = np.random.default_rng(9)
    for _ in range(1000):
        x = rng.uniform(-16, 16, 2)
        member = polytope.contains(pre, x, 1e-7)
        # direct witness: u with F_u u <= b_u and A x + B u in target
        sol = qp.solve_lp(np.zeros(1),
                          A_in=np.vstack([cons.F_u, target.H @ sys.B]),
                          b_in=np.concatenate([cons.b_u, target.h - target.H @ sys.A @ x]))
        witness = sol.status == qp.OPTIMAL and polytope.contains(
            polytope.Polyhedron(cons.F_x, cons.b_x), x, 1e-7)
        margin = np.abs(pre.H @ x - pre.h).min()
        if margin < 1e-6:
            continue
        assert member == witness


def test_max_ctrl_invariant_section6():
    sys = double_integrator()
    cons = model.box_constraints(15.0, 1.5)
    cinf, converged = polytope.max_ctrl_invariant(sys, cons, max_iter=60)
    assert converged
    assert polytope.contains(cinf, [0.0, 0.0])
    assert polytope.contains(cinf, [-14.0, 2.0], 1e-6)
    # nesting of the first few iterates
    K = polytope.Polyhedron(cons.F_x, cons.b_x)
    for _ in range(3):
        K_next = polytope.pre_set(K, sys, cons)
        for v in polytope.vertices_2d(K_next):
            assert polytope.contains(K, v, 1e-7)
        K = K_next


def test_max_ctrl_invariant_unconstrained_input():
    # fully actuated and input-unconstrained: any state maps anywhere,
    # so the box is already control invariant
    sys = model.LinearSystem(A=[[1.0, 1.0], [0.0, 1.0]], B=np.eye(2))
    cons = model.ConstraintSet(F_x=np.vstack([np.eye(2), -np.eye(2)]),
                               b_x=np.full(4, 2.0),
                               F_u=np.zeros((0, 2)), b_u=np.zeros(0))
    cinf, converged = polytope.max_ctrl_invariant(sys, cons, max_iter=5)
    assert converged
    assert polytope._sets_equal_2d(cinf, polytope.Polyhedron(cons.F_x, cons.b_x), 1e-7)


def test_max_pos_invariant_lqr():
    sys = double_integrator()
    cost = model.StageCost(Q=np.eye(2), R=[[1.0]])
    cons = model.box_constraints(15.0, 1.5)
    _, K = model.riccati_lqr(sys, cost)
    oinf, converged = polytope.max_pos_invariant(sys, K, cons)
    assert converged
    assert polytope.contains(oinf, [0.0, 0.0])
    # strict interior: a small ball around the origin is inside
    for ang in np.linspace(0, 2 * np.pi, 8, endpoint=False):
        assert polytope.contains(oinf, 0.05 * np.array([np.cos(ang), np.sin(ang)]))
    Acl = sys.A + sys.B @ K
    for v in polytope.vertices_2d(oinf):
        assert polytope.contains(oinf, Acl @ v, 1e-7)
    rng = np.random.default_rng(17)
    verts = polytope.vertices_2d(oinf)
    hits = 0
    while hits < 1000:
        w = rng.dirichlet(np.ones(len(verts)))
        x = w @ verts
        hits += 1
        for _ in range(30):
            assert polytope.contains(oinf, x, 1e-7)
            assert model.check_constraints(cons, x, K @ x).feasible
            x = Acl @ x


def test_max_pos_invariant_stable_diag_keeps_box():
    sys = model.LinearSystem(A=[[0.5, 0.0], [0.0, 0.5]], B=[[0.0], [1.0]])
    cons = model.box_constraints(1.0, 1.0)
    oinf, converged = polytope.max_pos_invariant(sys, np.zeros((1, 2)), cons)
    assert converged
    assert polytope._sets_equal_2d(oinf, polytope.Polyhedron(cons.F_x, cons.b_x), 1e-9)


def test_projection_row_cap():
    rng = np.random.default_rng(2)
    H = rng.standard_normal((40, 3))
    h = np.abs(rng.standard_normal(40)) + 0.5
    with pytest.raises(polytope.ProjectionOverflowError):
        polytope.project_fm(polytope.Polyhedron(H, h), [0], row_cap=10)
