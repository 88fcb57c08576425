import numpy as np
import pytest

from lmpckit import lmpc, model, safeset
from lmpckit.errors import (FeasibilityLostError, NoInitialTrajectoryError,
                            TrajectoryConsistencyError)


def make_setup(u_max=2.0):
    sys = model.LinearSystem(A=[[1.0, 1.0], [0.0, 1.0]], B=[[0.0], [1.0]])
    cost = model.StageCost(Q=np.eye(2), R=[[1.0]])
    cons = model.box_constraints(15.0, u_max)
    return sys, cost, cons


def quick_config(**overrides):
    kw = dict(N=3, trunc_tol=1e-5, fixedpoint_tol=1e-4, cost_tol=1e-8,
              T_max=60, max_iterations=8)
    kw.update(overrides)
    return lmpc.LmpcConfig(**kw)


X_S = np.array([-4.0, 1.0])


def test_config_validation():
    with pytest.raises(ValueError):
        lmpc.LmpcConfig(N=0)
    with pytest.raises(ValueError):
        lmpc.LmpcConfig(N=5, T_max=4)
    with pytest.raises(ValueError):
        lmpc.LmpcConfig(N=3, trunc_tol=0.0)
    with pytest.raises(ValueError):
        lmpc.LmpcConfig(N=3, cost_tol=-1.0)
    with pytest.raises(ValueError):
        lmpc.LmpcConfig(N=3, max_iterations=0)
    # unset cost_tol resolves relative to the first trajectory cost
    cfg = lmpc.LmpcConfig(N=3)
    assert cfg.resolve_cost_tol(99.0) == pytest.approx(1e-5)
    assert quick_config(cost_tol=1e-8).resolve_cost_tol(99.0) == 1e-8


def test_seed_trajectory_feasible_and_lands_at_origin():
    sys, cost, cons = make_setup()
    states, inputs = lmpc.generate_initial_trajectory(sys, cost, cons, X_S,
                                                      T_max=60)
    assert states.shape[0] == inputs.shape[0] + 1
    assert np.allclose(states[0], X_S)
    assert np.abs(states[-1]).max() <= 1e-9
    _, report, ok = model.check_trajectory(sys, cons, states, inputs)
    assert ok, report
    # the cautious input weighting must leave improvement on the table
    P, _ = model.riccati_lqr(sys, cost)
    seed_cost = sum(model.stage_cost(cost, states[t], inputs[t])
                    for t in range(len(inputs)))
    assert seed_cost > X_S @ P @ X_S + 0.1


def test_seed_rejects_doomed_and_outside_starts():
    sys, cost, cons = make_setup()
    # (14.9, 14.9) is inside the box but x1 jumps to 29.8 whatever u does
    with pytest.raises(NoInitialTrajectoryError):
        lmpc.generate_initial_trajectory(sys, cost, cons,
                                         np.array([14.9, 14.9]), T_max=60)
    with pytest.raises(NoInitialTrajectoryError):
        lmpc.generate_initial_trajectory(sys, cost, cons,
                                         np.array([15.5, 0.0]))


def origin_only_set(cost, sys):
    ss = safeset.SampledSafeSet(2, cost)
    return safeset.add_trajectory(ss, np.zeros((1, 2)), np.zeros((0, 1)),
                                  sys=sys)


def test_deadbeat_policy_on_origin_only_set():
    """N=1 with only the origin stored forces x_1 = 0 in one step.

    From (1, -1) the unique feasible input is u = 1 and the value is
    x'Qx + u'Ru = 2 + 1 = 3, by hand.  From (1, 0) no input reaches the
    origin in one step, so feasibility is genuinely lost.
    """
    sys, cost, cons = make_setup()
    ss = origin_only_set(cost, sys)
    step = lmpc.policy(sys, cost, cons, ss, np.array([1.0, -1.0]), 1)
    assert step.u == pytest.approx(np.array([1.0]), abs=1e-8)
    assert step.value == pytest.approx(3.0, abs=1e-8)
    assert np.abs(step.plan.states[1]).max() <= 1e-8
    assert step.plan.gamma == pytest.approx(np.array([1.0]), abs=1e-8)
    with pytest.raises(FeasibilityLostError):
        lmpc.policy(sys, cost, cons, ss, np.array([1.0, 0.0]), 1)


def test_policy_value_never_exceeds_stored_cost_to_go():
    # following the stored tail is always one feasible plan, so the
    # optimal value at a stored state is at most its recorded cost-to-go
    sys, cost, cons = make_setup()
    states, inputs = lmpc.generate_initial_trajectory(sys, cost, cons, X_S,
                                                      T_max=60)
    ss = safeset.SampledSafeSet(2, cost)
    ss = safeset.add_trajectory(ss, states, inputs, trunc_tol=1e-5, sys=sys)
    traj = ss.trajectories[0]
    for t in range(0, len(traj.states), 4):
        step = lmpc.policy(sys, cost, cons, ss, traj.states[t], 3)
        assert step.value <= traj.cost_to_go[t] + 1e-8


def test_policy_at_origin_is_idle():
    sys, cost, cons = make_setup()
    ss = origin_only_set(cost, sys)
    step = lmpc.policy(sys, cost, cons, ss, np.zeros(2), 3)
    assert np.abs(step.u).max() <= 1e-6
    assert abs(step.value) <= 1e-8


def test_run_iteration_improves_on_seed():
    sys, cost, cons = make_setup()
    cfg = quick_config()
    states, inputs = lmpc.generate_initial_trajectory(sys, cost, cons, X_S,
                                                      T_max=cfg.T_max)
    ss = safeset.SampledSafeSet(2, cost)
    ss = safeset.add_trajectory(ss, states, inputs, trunc_tol=cfg.trunc_tol,
                                sys=sys)
    j0 = ss.trajectories[0].cost_to_go[0]
    run = lmpc.run_iteration(sys, cost, cons, ss, X_S, cfg)
    assert run.realized_cost <= j0 + 1e-8
    assert run.prediction_gap <= 1e-9
    assert run.decrease_slack >= -1e-6
    assert np.linalg.norm(run.states[-1]) <= cfg.trunc_tol
    # chain = (cost so far) + (value at current state); each link is the
    # per-step decrease condition, so it can only sag below the start
    assert run.chain[0] == pytest.approx(run.values[0], abs=1e-12)
    assert run.chain.max() <= run.chain[0] + 1e-6


def test_learning_run_monotone_and_near_lqr():
    """Eight iterations from an interior start close most of the gap to
    the unconstrained LQR cost, which is a valid lower bound throughout."""
    sys, cost, cons = make_setup()
    hist = lmpc.run_until_fixed_point(sys, cost, cons, X_S, quick_config())
    assert hist.iteration_count == 8
    assert hist.converged_at is None
    assert all(entry == "strict-decrease" for entry in hist.strict_decrease_log)
    assert np.all(np.diff(hist.costs) < 0)
    P, _ = model.riccati_lqr(sys, cost)
    bound = X_S @ P @ X_S
    assert hist.costs[-1] >= bound - 1e-6
    assert hist.costs[-1] <= bound + 1e-2
    assert hist.sandwich_slack >= -1e-6
    assert hist.decrease_slack >= -1e-6


def test_learning_run_from_origin_is_trivial():
    sys, cost, cons = make_setup()
    hist = lmpc.run_until_fixed_point(sys, cost, cons, np.zeros(2),
                                      quick_config())
    assert hist.converged_at == 1
    assert hist.costs == [0.0, 0.0]
    assert len(hist.fixed_point.states) == 1


def test_supplied_initial_trajectory_paths():
    sys, cost, cons = make_setup()
    cfg = quick_config(max_iterations=2)
    states, inputs = lmpc.generate_initial_trajectory(sys, cost, cons, X_S,
                                                      T_max=cfg.T_max)
    hist = lmpc.run_until_fixed_point(sys, cost, cons, X_S, cfg,
                                      initial=(states, inputs))
    assert hist.costs[0] == pytest.approx(
        sum(model.stage_cost(cost, states[t], inputs[t])
            for t in range(len(inputs))), rel=1e-9)
    bad = states.copy()
    bad[3] += 0.5
    with pytest.raises(TrajectoryConsistencyError):
        lmpc.run_until_fixed_point(sys, cost, cons, X_S, cfg,
                                   initial=(bad, inputs))


def test_history_bookkeeping_shapes():
    sys, cost, cons = make_setup()
    cfg = quick_config(max_iterations=3)
    hist = lmpc.run_until_fixed_point(sys, cost, cons, X_S, cfg)
    assert len(hist.costs) == len(hist.runs) + 1
    assert len(hist.strict_decrease_log) == len(hist.runs)
    for run in hist.runs:
        L = len(run.inputs)
        assert run.states.shape == (L + 1, 2)
        assert run.values.shape == (L + 1,)
        assert run.stage_costs.shape == (L,)
        assert run.chain.shape == (L + 1,)
        assert run.realized_cost == pytest.approx(run.stage_costs.sum())
