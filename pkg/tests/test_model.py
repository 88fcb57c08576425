import numpy as np
import pytest

from lmpckit import model


def double_integrator():
    return model.LinearSystem(A=[[1.0, 1.0], [0.0, 1.0]], B=[[0.0], [1.0]])


def test_step_values():
    sys = double_integrator()
    assert np.allclose(model.step(sys, [-14.0, 2.0], [0.0]), [-12.0, 2.0])
    assert np.allclose(model.step(sys, [0.0, 0.0], [0.0]), [0.0, 0.0])
    assert np.allclose(model.step(sys, [-14.0, 2.0], [2.0]), [-12.0, 4.0])


def test_step_linearity():
    sys = double_integrator()
    rng = np.random.default_rng(0)
    for _ in range(20):
        x1, x2 = rng.standard_normal(2), rng.standard_normal(2)
        u1, u2 = rng.standard_normal(1), rng.standard_normal(1)
        lhs = model.step(sys, x1 + x2, u1 + u2)
        rhs = model.step(sys, x1, u1) + model.step(sys, x2, u2) - model.step(sys, np.zeros(2), np.zeros(1))
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_stage_cost_values():
    cost = model.StageCost(Q=np.eye(2), R=[[1.0]])
    assert model.stage_cost(cost, [-14.0, 2.0], [2.0]) == pytest.approx(204.0)
    assert model.stage_cost(cost, [0.0, 0.0], [0.0]) == 0.0
    assert model.stage_cost(cost, [1.0, 0.0], [-1.0]) == pytest.approx(2.0)


def test_stage_cost_zero_iff_kernel():
    cost = model.StageCost(Q=np.eye(2), R=[[1.0]])
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.standard_normal(2)
        u = rng.standard_normal(1)
        c = model.stage_cost(cost, x, u)
        assert c >= 0.0
        if np.linalg.norm(x) > 1e-12 or np.linalg.norm(u) > 1e-12:
            assert c > 0.0


def test_cost_validation():
    with pytest.raises(ValueError):
        model.StageCost(Q=np.eye(2), R=[[0.0]])
    with pytest.raises(ValueError):
        model.StageCost(Q=[[-1.0, 0.0], [0.0, 1.0]], R=[[1.0]])
    # slight asymmetry is symmetrized, not rejected
    c = model.StageCost(Q=[[1.0, 1e-13], [0.0, 1.0]], R=[[1.0]])
    assert np.allclose(c.Q, c.Q.T)


def test_check_constraints():
    cons = model.box_constraints(15.0, 1.5)
    r = model.check_constraints(cons, [-14.0, 2.0], [1.5])
    assert r.feasible and r.state_violation == 0.0 and r.input_violation == 0.0
    r = model.check_constraints(cons, [16.0, 0.0], [0.0])
    assert not r.feasible
    assert r.state_violation == pytest.approx(1.0)
    r = model.check_constraints(cons, [15.0, 15.0], [1.5])
    assert r.feasible


def test_constraints_reject_origin_on_boundary():
    with pytest.raises(ValueError):
        model.ConstraintSet(F_x=[[1.0, 0.0]], b_x=[0.0], F_u=[[1.0]], b_u=[1.0])


def test_riccati_fixed_point_residual():
    sys = double_integrator()
    cost = model.StageCost(Q=np.eye(2), R=[[1.0]])
    P, K = model.riccati_lqr(sys, cost)
    BtP = sys.B.T @ P
    recur = cost.Q + sys.A.T @ P @ sys.A - \
        sys.A.T @ P @ sys.B @ np.linalg.solve(cost.R + BtP @ sys.B, BtP @ sys.A)
    assert np.abs(P - recur).max() <= 1e-10
    assert np.allclose(P, P.T)
    assert np.linalg.eigvalsh(P).min() > 0
    assert np.abs(np.linalg.eigvals(sys.A + sys.B @ K)).max() < 1.0


def test_riccati_scalar_known_value():
    sys = model.LinearSystem(A=[[0.0]], B=[[1.0]])
    cost = model.StageCost(Q=[[1.0]], R=[[1.0]])
    P, K = model.riccati_lqr(sys, cost)
    assert P[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert abs(K[0, 0]) <= 1e-12
