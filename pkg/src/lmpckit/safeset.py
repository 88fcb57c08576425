"""Sampled safe set: stored trajectories and cost-to-go interpolation.

Every converged closed-loop run is truncated once state and input enter
the truncation ball, closed with an exact origin point at zero cost, and
folded into a growing point cloud.  The set itself is the convex hull of
the stored states; its value function interpolates the stored cost-to-go
through the weight LP

    minimize    c' gamma
    subject to  sum_i gamma_i p_i = x,  sum_i gamma_i = 1,  gamma >= 0.

Updates are functional: add_trajectory returns a new set, so readers of
an older snapshot are never disturbed.

The LPs run over the vertices of the lifted convex hull of {(p_i, c_i)}
rather than all stored points.  A point off that hull receives zero
weight in some optimal solution, so the feasible x-region and the
optimal value are both unchanged; returned weight vectors are
re-embedded over the full point list.
"""

import numpy as np
from dataclasses import dataclass

from scipy.spatial import ConvexHull, QhullError

from . import model, qp
from .errors import TrajectoryConsistencyError

# below this many points the hull reduction is not worth the call
_HULL_MIN_POINTS = 50


class NotInSafeSetError(Exception):
    """Queried state lies outside the convex hull of stored points."""


class RejectedTrajectoryError(ValueError):
    """Trajectory never entered the truncation ball; cannot be stored."""


@dataclass
class StoredTrajectory:
    states: np.ndarray
    inputs: np.ndarray
    cost_to_go: np.ndarray
    iteration_index: int


class SampledSafeSet:
    """Immutable-by-convention container of stored points and costs.

    The stage cost given at construction defines the cost-to-go of every
    stored trajectory; without one all stored costs are zero (pure
    geometry, used in tests only).
    """

    def __init__(self, n, cost=None):
        self.n = int(n)
        self.cost = cost
        self.trajectories = []
        self.points = np.zeros((0, self.n))
        self.costs = np.zeros(0)
        self.point_iteration = np.zeros(0, dtype=int)
        self.point_time = np.zeros(0, dtype=int)
        self.support_indices = np.zeros(0, dtype=int)
        self._key_to_index = {}

    def __len__(self):
        return len(self.points)

    @property
    def is_empty(self):
        return len(self.points) == 0

    def support_points(self):
        return self.points[self.support_indices]

    def support_costs(self):
        return self.costs[self.support_indices]

    def _clone(self):
        other = SampledSafeSet(self.n, self.cost)
        other.trajectories = list(self.trajectories)
        other.points = self.points.copy()
        other.costs = self.costs.copy()
        other.point_iteration = self.point_iteration.copy()
        other.point_time = self.point_time.copy()
        other.support_indices = self.support_indices.copy()
        other._key_to_index = dict(self._key_to_index)
        return other


def _point_key(x):
    # dedup at 1e-9 via rounding; boundary collisions only cost LP size
    return tuple(np.round(x, 9).tolist())


def _recompute_support(points, costs):
    P = len(points)
    if P <= _HULL_MIN_POINTS or points.shape[1] > 3:
        return np.arange(P)
    lifted = np.hstack([points, costs[:, None]])
    try:
        hull = ConvexHull(lifted)
    except QhullError:
        return np.arange(P)
    return np.unique(hull.vertices)


def add_trajectory(ss, states, inputs, trunc_tol=1e-8, sys=None):
    """Fold one converged closed-loop run into the safe set.

    The trajectory is truncated at the first index where both the state
    and the applied input are inside the truncation ball, an exact
    origin is appended at zero cost (the hop onto it carries a
    synthesized zero input; the neglected tail cost is of order
    trunc_tol squared), and cost-to-go values are accumulated backward.
    When `sys` is given, dynamics consistency of the pre-truncation part
    is enforced at 1e-9.  Returns the updated set; points already stored
    keep the cheaper of the two costs.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[1] != ss.n:
        raise ValueError("state dimension %d does not match safe set (%d)"
                         % (states.shape[1], ss.n))
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs.reshape(-1, 1)
    if len(inputs) != len(states) - 1:
        raise ValueError("expected %d inputs for %d states, got %d"
                         % (len(states) - 1, len(states), len(inputs)))
    d = inputs.shape[1]

    cut = None
    for t in range(len(states)):
        x_small = np.linalg.norm(states[t]) <= trunc_tol
        u_small = t >= len(inputs) or np.linalg.norm(inputs[t]) <= trunc_tol
        if x_small and u_small:
            cut = t
            break
    if cut is None:
        raise RejectedTrajectoryError(
            "trajectory never reached the truncation ball (final state norm %.3g)"
            % np.linalg.norm(states[-1]))

    kept_x = states[: cut + 1]
    kept_u = inputs[:cut]
    if sys is not None:
        for t in range(len(kept_u)):
            resid = np.abs(kept_x[t + 1] - model.step(sys, kept_x[t], kept_u[t])).max()
            if resid > 1e-9:
                raise TrajectoryConsistencyError(
                    "dynamics residual %.3g at step %d exceeds 1e-9" % (resid, t))

    if np.linalg.norm(kept_x[-1]) > 0.0:
        kept_x = np.vstack([kept_x, np.zeros(ss.n)])
        kept_u = np.vstack([kept_u, np.zeros(d)])

    ctg = np.zeros(len(kept_x))
    if ss.cost is not None:
        for t in range(len(kept_x) - 2, -1, -1):
            ctg[t] = ctg[t + 1] + model.stage_cost(ss.cost, kept_x[t], kept_u[t])

    out = ss._clone()
    traj = StoredTrajectory(states=kept_x, inputs=kept_u, cost_to_go=ctg,
                            iteration_index=len(out.trajectories))
    out.trajectories.append(traj)

    new_pts, new_costs, new_iter, new_time = [], [], [], []
    for t, (x, c) in enumerate(zip(kept_x, ctg)):
        key = _point_key(x)
        idx = out._key_to_index.get(key)
        if idx is None:
            out._key_to_index[key] = len(out.points) + len(new_pts)
            new_pts.append(x)
            new_costs.append(c)
            new_iter.append(traj.iteration_index)
            new_time.append(t)
        elif idx < len(out.points):
            if c < out.costs[idx]:
                out.costs[idx] = c
                out.point_iteration[idx] = traj.iteration_index
                out.point_time[idx] = t
        else:
            j = idx - len(out.points)
            if c < new_costs[j]:
                new_costs[j] = c
                new_iter[j] = traj.iteration_index
                new_time[j] = t
    if new_pts:
        out.points = np.vstack([out.points, np.asarray(new_pts)])
        out.costs = np.concatenate([out.costs, np.asarray(new_costs)])
        out.point_iteration = np.concatenate([out.point_iteration, np.asarray(new_iter, dtype=int)])
        out.point_time = np.concatenate([out.point_time, np.asarray(new_time, dtype=int)])
    out.support_indices = _recompute_support(out.points, out.costs)
    return out


def _weight_lp(ss, x, objective):
    pts = ss.support_points()
    S = len(pts)
    A_eq = np.vstack([pts.T, np.ones((1, S))])
    b_eq = np.concatenate([x, [1.0]])
    return qp.solve_lp(objective, A_eq=A_eq, b_eq=b_eq,
                       A_in=-np.eye(S), b_in=np.zeros(S))


def value(ss, x):
    """Interpolated cost-to-go at x and its weight vector.

    Raises NotInSafeSetError when x is outside the hull (an infeasible
    weight LP), as opposed to a numerical failure, which raises
    RuntimeError.
    """
    if ss.is_empty:
        raise ValueError("safe set is empty")
    x = np.asarray(x, dtype=float).reshape(-1)
    sol = _weight_lp(ss, x, ss.support_costs())
    if sol.status == qp.INFEASIBLE:
        raise NotInSafeSetError("state %s is outside the safe set" % x)
    if sol.status != qp.OPTIMAL:
        raise RuntimeError("weight LP failed with status %s" % sol.status)
    gamma = np.zeros(len(ss.points))
    gamma[ss.support_indices] = np.maximum(sol.z, 0.0)
    return float(sol.value), gamma


def contains(ss, x):
    """Hull membership via feasibility of the weight LP."""
    if ss.is_empty:
        raise ValueError("safe set is empty")
    x = np.asarray(x, dtype=float).reshape(-1)
    sol = _weight_lp(ss, x, np.zeros(len(ss.support_indices)))
    if sol.status == qp.INFEASIBLE:
        return False
    if sol.status != qp.OPTIMAL:
        raise RuntimeError("membership LP failed with status %s" % sol.status)
    return True
