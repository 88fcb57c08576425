"""Receding-horizon controller with a sampled terminal set.

The per-step problem steers the state over a horizon of N steps into the
convex hull of previously stored states, paying the interpolated stored
cost-to-go at the terminal point.  Applying the first input of each solve
and folding every finished run back into the safe set makes the
closed-loop cost non-increasing across iterations; the loop stops when
two consecutive trajectories coincide.
"""

import numpy as np
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from . import model, safeset
from .qp import QpProblem, solve_qp, OPTIMAL, INFEASIBLE
from .errors import (FeasibilityLostError, MonotonicityError,
                     NoInitialTrajectoryError, NonConvergenceError,
                     TrajectoryConsistencyError)


@dataclass
class LmpcConfig:
    """Knobs for one closed-loop learning run.

    cost_tol left at None resolves to 1e-7 * (1 + J0) once the first
    trajectory cost is known.  trunc_tol governs both the closed-loop
    stop rule and safe-set truncation; its default sits above the QP
    noise floor (per-step descent is the stage cost ~ ||x||^2, which
    meets the solver's ~1e-11 vertex-selection noise near ||x|| = 3e-6,
    so a tighter ball risks a limit cycle just outside it), and the
    tail cost it discards is O(trunc_tol^2).
    """
    N: int
    trunc_tol: float = 1e-5
    fixedpoint_tol: float = 1e-6
    cost_tol: Optional[float] = None
    T_max: int = 150
    max_iterations: int = 30

    def __post_init__(self):
        self.N = int(self.N)
        if self.N < 1:
            raise ValueError("horizon N must be >= 1")
        for name in ("trunc_tol", "fixedpoint_tol"):
            if getattr(self, name) <= 0:
                raise ValueError("%s must be positive" % name)
        if self.cost_tol is not None and self.cost_tol <= 0:
            raise ValueError("cost_tol must be positive when given")
        self.T_max = int(self.T_max)
        self.max_iterations = int(self.max_iterations)
        if self.T_max < self.N:
            raise ValueError("T_max must be at least N")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def resolve_cost_tol(self, j0):
        if self.cost_tol is not None:
            return float(self.cost_tol)
        return 1e-7 * (1.0 + float(j0))


class Plan(NamedTuple):
    states: np.ndarray   # (N+1, n) predicted states
    inputs: np.ndarray   # (N, d) predicted inputs
    gamma: np.ndarray    # interpolation weights over all stored points


class PolicyStep(NamedTuple):
    u: np.ndarray
    plan: Plan
    value: float


@dataclass
class IterationRun:
    """One closed-loop pass: realized motion plus per-step solver output."""
    states: np.ndarray        # (L+1, n) visited states, last one inside the ball
    inputs: np.ndarray        # (L, d) applied inputs
    values: np.ndarray        # (L+1,) optimal value at each visited state
    stage_costs: np.ndarray   # (L,) realized h(x_t, u_t)
    chain: np.ndarray         # (L+1,) running cost-so-far + value_t
    realized_cost: float
    decrease_slack: float     # min over t of value_t - h_t - value_{t+1}
    prediction_gap: float     # max |realized next state - predicted one|


@dataclass
class IterationHistory:
    """Everything a learning run produced, immutable after the fact."""
    costs: list                     # J^0, J^1, ... (stored-trajectory costs)
    runs: list                      # IterationRun per iteration, index 0 <-> J^1
    strict_decrease_log: list       # per iteration: "strict-decrease" | "fixed" | "neither"
    converged_at: Optional[int]
    safe_set: safeset.SampledSafeSet
    initial_states: np.ndarray
    initial_inputs: np.ndarray
    cost_tol: float
    fixedpoint_tol: float
    sandwich_slack: float = field(default=np.inf)   # min over all iterations/steps
    decrease_slack: float = field(default=np.inf)

    @property
    def fixed_point(self):
        return self.safe_set.trajectories[-1]

    @property
    def iteration_count(self):
        return len(self.runs)


def generate_initial_trajectory(sys, cost, cons, x_S, T_max=150,
                                input_weight=50.0, input_margin=0.9):
    """First feasible trajectory: cautious long-horizon plan, then rollout.

    Solves one QP over T_max steps with the input cost inflated by
    `input_weight` and input bounds shrunk by `input_margin`, pinning the
    final state to the origin, and forward-simulates the resulting input
    sequence.  Deliberately conservative so later iterations have room to
    improve.
    """
    x_S = np.asarray(x_S, dtype=float).reshape(-1)
    if x_S.shape != (sys.n,):
        raise ValueError("x_S has wrong dimension")
    rep = model.check_constraints(cons, x_S, np.zeros(sys.d))
    if rep.state_violation > 0:
        raise NoInitialTrajectoryError("start state violates state constraints")
    T = int(T_max)
    n, d = sys.n, sys.d
    nx = n * (T + 1)
    nv = nx + d * T

    H = np.zeros((nv, nv))
    for k in range(T):
        H[k * n:(k + 1) * n, k * n:(k + 1) * n] = cost.Q
        i = nx + k * d
        H[i:i + d, i:i + d] = input_weight * cost.R

    m_eq = n * (T + 2)
    A_eq = np.zeros((m_eq, nv))
    b_eq = np.zeros(m_eq)
    A_eq[0:n, 0:n] = np.eye(n)
    b_eq[0:n] = x_S
    for k in range(T):
        r = n * (k + 1)
        A_eq[r:r + n, (k + 1) * n:(k + 2) * n] = np.eye(n)
        A_eq[r:r + n, k * n:(k + 1) * n] = -sys.A
        A_eq[r:r + n, nx + k * d:nx + (k + 1) * d] = -sys.B
    A_eq[n * (T + 1):, T * n:(T + 1) * n] = np.eye(n)   # x_T = 0

    mx, mu = cons.F_x.shape[0], cons.F_u.shape[0]
    A_in = np.zeros((T * (mx + mu), nv))
    b_in = np.zeros(T * (mx + mu))
    for k in range(T):
        r = k * (mx + mu)
        A_in[r:r + mx, k * n:(k + 1) * n] = cons.F_x
        b_in[r:r + mx] = cons.b_x
        A_in[r + mx:r + mx + mu, nx + k * d:nx + (k + 1) * d] = cons.F_u
        b_in[r + mx:r + mx + mu] = input_margin * cons.b_u

    sol = solve_qp(QpProblem(H=H, f=np.zeros(nv), A_eq=A_eq, b_eq=b_eq,
                             A_in=A_in, b_in=b_in))
    if sol.status == INFEASIBLE:
        raise NoInitialTrajectoryError(
            "no trajectory reaches the origin from %s within %d steps "
            "under tightened input bounds" % (np.array2string(x_S), T))
    if sol.status != OPTIMAL:
        raise RuntimeError("seed problem solve failed: %s" % sol.status)

    inputs = sol.z[nx:].reshape(T, d)
    states = np.zeros((T + 1, n))
    states[0] = x_S
    for k in range(T):
        states[k + 1] = model.step(sys, states[k], inputs[k])
    _, report, ok = model.check_trajectory(sys, cons, states, inputs)
    if not ok:
        raise RuntimeError("seed trajectory failed re-validation: %s" % report)
    return states, inputs


def _ftocp_slices(n, d, N, S):
    # variable layout: x_0..x_N, then u_0..u_{N-1}, then gamma
    nx = n * (N + 1)
    return nx, nx + d * N, nx + d * N + S


def build_ftocp(sys, cost, cons, ss, x_t, N):
    """Assemble the horizon-N problem at x_t with sampled terminal set.

    Decision vector: predicted states, predicted inputs, interpolation
    weights gamma over the safe set's support points.  The terminal state
    is constrained to the weighted combination and the weighted stored
    costs enter the objective linearly.
    """
    if ss.is_empty:
        raise ValueError("safe set is empty")
    x_t = np.asarray(x_t, dtype=float).reshape(-1)
    n, d = sys.n, sys.d
    P = ss.support_points()
    c = ss.support_costs()
    S = len(P)
    nx, nu_end, nv = _ftocp_slices(n, d, N, S)

    H = np.zeros((nv, nv))
    for k in range(N):
        H[k * n:(k + 1) * n, k * n:(k + 1) * n] = cost.Q
        i = nx + k * d
        H[i:i + d, i:i + d] = cost.R
    f = np.zeros(nv)
    f[nu_end:] = c

    m_eq = n * (N + 2) + 1
    A_eq = np.zeros((m_eq, nv))
    b_eq = np.zeros(m_eq)
    A_eq[0:n, 0:n] = np.eye(n)
    b_eq[0:n] = x_t
    for k in range(N):
        r = n * (k + 1)
        A_eq[r:r + n, (k + 1) * n:(k + 2) * n] = np.eye(n)
        A_eq[r:r + n, k * n:(k + 1) * n] = -sys.A
        A_eq[r:r + n, nx + k * d:nx + (k + 1) * d] = -sys.B
    r = n * (N + 1)
    A_eq[r:r + n, N * n:(N + 1) * n] = np.eye(n)
    A_eq[r:r + n, nu_end:] = -P.T
    A_eq[m_eq - 1, nu_end:] = 1.0
    b_eq[m_eq - 1] = 1.0

    mx, mu = cons.F_x.shape[0], cons.F_u.shape[0]
    m_in = N * (mx + mu) + S
    A_in = np.zeros((m_in, nv))
    b_in = np.zeros(m_in)
    for k in range(N):
        r = k * (mx + mu)
        A_in[r:r + mx, k * n:(k + 1) * n] = cons.F_x
        b_in[r:r + mx] = cons.b_x
        A_in[r + mx:r + mx + mu, nx + k * d:nx + (k + 1) * d] = cons.F_u
        b_in[r + mx:r + mx + mu] = cons.b_u
    A_in[N * (mx + mu):, nu_end:] = -np.eye(S)

    return QpProblem(H=H, f=f, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in)


def policy(sys, cost, cons, ss, x_t, N):
    """One control step: solve the horizon problem, return the first input.

    Raises FeasibilityLostError when the problem is infeasible at x_t,
    which a correctly seeded closed loop can never trigger.
    """
    problem = build_ftocp(sys, cost, cons, ss, x_t, N)
    sol = solve_qp(problem)
    if sol.status == INFEASIBLE:
        raise FeasibilityLostError(
            "horizon problem infeasible at state %s" % np.array2string(
                np.asarray(x_t, dtype=float)))
    if sol.status != OPTIMAL:
        raise RuntimeError("horizon problem solve failed: %s" % sol.status)
    n, d = sys.n, sys.d
    S = len(ss.support_indices)
    nx, nu_end, nv = _ftocp_slices(n, d, N, S)
    states = sol.z[:nx].reshape(N + 1, n)
    inputs = sol.z[nx:nu_end].reshape(N, d)
    gamma_support = np.clip(sol.z[nu_end:], 0.0, None)
    gamma = np.zeros(len(ss))
    gamma[ss.support_indices] = gamma_support
    return PolicyStep(u=inputs[0].copy(),
                      plan=Plan(states=states, inputs=inputs, gamma=gamma),
                      value=float(sol.value))


def run_iteration(sys, cost, cons, ss, x_S, config):
    """Roll the closed loop from x_S until it settles into the origin ball.

    Stops at the first state where both the state and the input the
    policy would apply are inside the truncation ball; that state is kept
    as the final row and its value recorded, but the input is not
    applied.
    """
    x = np.asarray(x_S, dtype=float).reshape(-1)
    states = [x.copy()]
    inputs = []
    values = []
    stage_costs = []
    pred_gap = 0.0
    prev_value = None
    decrease_slack = np.inf

    for t in range(config.T_max + 1):
        step_out = policy(sys, cost, cons, ss, x, config.N)
        values.append(step_out.value)
        if prev_value is not None:
            decrease_slack = min(
                decrease_slack, prev_value - stage_costs[-1] - step_out.value)
        if (np.linalg.norm(x) <= config.trunc_tol
                and np.linalg.norm(step_out.u) <= config.trunc_tol):
            break
        if t == config.T_max:
            raise NonConvergenceError(
                "closed loop still outside the truncation ball after %d steps"
                % config.T_max)
        u = step_out.u
        x_next = model.step(sys, x, u)
        gap = float(np.abs(x_next - step_out.plan.states[1]).max())
        pred_gap = max(pred_gap, gap)
        if gap > 1e-9:
            raise TrajectoryConsistencyError(
                "realized state deviates from the one-step prediction by %.3g"
                % gap)
        rep = model.check_constraints(cons, x, u)
        if not rep.feasible:
            raise TrajectoryConsistencyError(
                "closed-loop step violates constraints by %.3g"
                % max(rep.state_violation, rep.input_violation))
        inputs.append(u)
        stage_costs.append(model.stage_cost(cost, x, u))
        prev_value = step_out.value
        states.append(x_next)
        x = x_next

    states = np.asarray(states)
    inputs = np.asarray(inputs).reshape(len(inputs), sys.d)
    values = np.asarray(values)
    stage_costs = np.asarray(stage_costs)
    cum = np.concatenate([[0.0], np.cumsum(stage_costs)])
    return IterationRun(states=states, inputs=inputs, values=values,
                        stage_costs=stage_costs, chain=cum + values,
                        realized_cost=float(stage_costs.sum()),
                        decrease_slack=float(decrease_slack),
                        prediction_gap=pred_gap)


def _aligned_deviation(a, b):
    # pad the shorter trajectory with origin rows; both end near 0 anyway
    L = max(len(a), len(b))
    pa = np.zeros((L, a.shape[1]))
    pb = np.zeros((L, b.shape[1]))
    pa[:len(a)] = a
    pb[:len(b)] = b
    return float(np.abs(pa - pb).max(initial=0.0))


def run_until_fixed_point(sys, cost, cons, x_S, config, initial=None):
    """Full learning run: seed, iterate, fold, stop at a fixed point.

    `initial` optionally supplies a (states, inputs) pair satisfying the
    usual seed requirements and skips the built-in seed problem.  Raises
    MonotonicityError if any iteration cost rises beyond tolerance; a
    "neither" entry in the decrease log marks an iteration that neither
    strictly improved nor reproduced the previous trajectory, which the
    theory rules out but which is recorded rather than raised.
    """
    if initial is None:
        init_states, init_inputs = generate_initial_trajectory(
            sys, cost, cons, x_S, T_max=config.T_max)
    else:
        init_states = np.asarray(initial[0], dtype=float)
        init_inputs = np.asarray(initial[1], dtype=float)
        _, report, ok = model.check_trajectory(sys, cons, init_states,
                                               init_inputs)
        if not ok:
            raise TrajectoryConsistencyError(
                "supplied initial trajectory rejected: %s" % report)

    ss = safeset.SampledSafeSet(sys.n, cost)
    ss = safeset.add_trajectory(ss, init_states, init_inputs,
                                trunc_tol=config.trunc_tol, sys=sys)
    costs = [float(ss.trajectories[-1].cost_to_go[0])]
    cost_tol = config.resolve_cost_tol(costs[0])

    runs = []
    log = []
    converged_at = None
    sandwich_slack = np.inf
    decrease_slack = np.inf
    prev_states = ss.trajectories[-1].states

    for j in range(1, config.max_iterations + 1):
        run = run_iteration(sys, cost, cons, ss, x_S, config)
        ss = safeset.add_trajectory(ss, run.states, run.inputs,
                                    trunc_tol=config.trunc_tol, sys=sys)
        stored = ss.trajectories[-1]
        j_cost = float(stored.cost_to_go[0])
        if j_cost > costs[-1] + cost_tol:
            raise MonotonicityError(
                "iteration %d cost %.9g exceeds previous %.9g beyond %.1e"
                % (j, j_cost, costs[-1], cost_tol))
        sandwich_slack = min(sandwich_slack,
                             costs[-1] - float(run.chain.max()),
                             float(run.chain.min()) - j_cost)
        decrease_slack = min(decrease_slack, run.decrease_slack)

        strict = costs[-1] - j_cost > cost_tol
        fixed = _aligned_deviation(prev_states, stored.states) <= config.fixedpoint_tol
        log.append("strict-decrease" if strict else
                   ("fixed" if fixed else "neither"))
        costs.append(j_cost)
        runs.append(run)
        prev_states = stored.states
        if fixed:
            converged_at = j
            break

    return IterationHistory(costs=costs, runs=runs, strict_decrease_log=log,
                            converged_at=converged_at, safe_set=ss,
                            initial_states=init_states,
                            initial_inputs=init_inputs,
                            cost_tol=cost_tol,
                            fixedpoint_tol=config.fixedpoint_tol,
                            sandwich_slack=float(sandwich_slack),
                            decrease_slack=float(decrease_slack))
