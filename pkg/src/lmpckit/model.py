"""System, cost and constraint containers plus the Riccati/LQR baseline.

Everything here is a pure function of immutable inputs: a discrete-time
linear system x+ = A x + B u, a quadratic stage cost x'Qx + u'Ru, and
polyhedral state/input constraints F_x x <= b_x, F_u u <= b_u with the
origin strictly inside both.
"""

import numpy as np
from dataclasses import dataclass


@dataclass
class LinearSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float)
        if self.B.ndim == 1:
            self.B = self.B.reshape(-1, 1)
        if self.A.shape[0] != self.A.shape[1]:
            raise ValueError("A must be square, got %s" % (self.A.shape,))
        if self.B.shape[0] != self.A.shape[0]:
            raise ValueError("B has %d rows, expected %d"
                             % (self.B.shape[0], self.A.shape[0]))
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise ValueError("system matrices must be finite")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.B.shape[1]


def _symmetrize(M, name, min_eig):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError("%s must be square" % name)
    M = 0.5 * (M + M.T)
    w = np.linalg.eigvalsh(M)
    if w.min() < min_eig:
        raise ValueError("%s has eigenvalue %.3g below %g" % (name, w.min(), min_eig))
    return M


@dataclass
class StageCost:
    """Quadratic stage cost x'Qx + u'Ru with Q >= 0 and R > 0.

    Matrices are symmetrized on ingestion so slightly asymmetric config
    input cannot poison downstream QPs.
    """

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.Q = _symmetrize(self.Q, "Q", -1e-10)
        self.R = _symmetrize(self.R, "R", 1e-12)


@dataclass
class ConstraintSet:
    """State and input half-spaces with the origin strictly feasible."""

    F_x: np.ndarray
    b_x: np.ndarray
    F_u: np.ndarray
    b_u: np.ndarray

    def __post_init__(self):
        self.F_x = np.atleast_2d(np.asarray(self.F_x, dtype=float))
        self.F_u = np.atleast_2d(np.asarray(self.F_u, dtype=float))
        self.b_x = np.asarray(self.b_x, dtype=float).reshape(-1)
        self.b_u = np.asarray(self.b_u, dtype=float).reshape(-1)
        if self.F_x.shape[0] != len(self.b_x):
            raise ValueError("F_x/b_x row mismatch")
        if self.F_u.shape[0] != len(self.b_u):
            raise ValueError("F_u/b_u row mismatch")
        if len(self.b_x) and self.b_x.min() <= 0:
            raise ValueError("origin not strictly inside the state set")
        if len(self.b_u) and self.b_u.min() <= 0:
            raise ValueError("origin not strictly inside the input set")

    @property
    def n(self):
        return self.F_x.shape[1]

    @property
    def d(self):
        return self.F_u.shape[1]


def box_constraints(x_bound, u_bound, n=2, d=1):
    """Axis-aligned box |x_i| <= x_bound, |u_i| <= u_bound."""
    F_x = np.vstack([np.eye(n), -np.eye(n)])
    F_u = np.vstack([np.eye(d), -np.eye(d)])
    return ConstraintSet(F_x, np.full(2 * n, float(x_bound)),
                         F_u, np.full(2 * d, float(u_bound)))


@dataclass
class ViolationReport:
    state_violation: float
    input_violation: float
    feasible: bool


def step(sys, x, u):
    """One exact step of the dynamics, A x + B u."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if len(x) != sys.n or len(u) != sys.d:
        raise ValueError("state/input dimension mismatch")
    return sys.A @ x + sys.B @ u


def stage_cost(cost, x, u):
    """x'Qx + u'Ru, nonnegative by construction."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if len(x) != cost.Q.shape[0] or len(u) != cost.R.shape[0]:
        raise ValueError("state/input dimension mismatch")
    return float(x @ cost.Q @ x + u @ cost.R @ u)


def check_constraints(cons, x, u, tol=1e-7):
    """Max violation per constraint family; feasible within tol.

    Violations are max(F z - b, 0) in the inf norm, so a point exactly on
    the boundary reports zero and stays feasible.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    sx = float(np.maximum(cons.F_x @ x - cons.b_x, 0.0).max(initial=0.0))
    su = float(np.maximum(cons.F_u @ u - cons.b_u, 0.0).max(initial=0.0))
    return ViolationReport(state_violation=sx, input_violation=su,
                           feasible=(sx <= tol and su <= tol))


def check_trajectory(sys, cons, states, inputs, tol=1e-7, dyn_tol=1e-9):
    """Validate a whole rollout: dynamics consistency and constraints.

    Returns (max dynamics residual, worst ViolationReport-style maxima,
    feasible flag).  Used when re-ingesting artifact files.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float).reshape(len(states) - 1, -1)) \
        if len(states) > 1 else np.zeros((0, sys.d))
    dyn = 0.0
    for t in range(len(inputs)):
        dyn = max(dyn, float(np.abs(states[t + 1] - step(sys, states[t], inputs[t])).max()))
    sx = max((check_constraints(cons, x, np.zeros(sys.d), tol).state_violation
              for x in states), default=0.0)
    su = max((check_constraints(cons, np.zeros(sys.n), u, tol).input_violation
              for u in inputs), default=0.0)
    return dyn, ViolationReport(sx, su, sx <= tol and su <= tol), dyn <= dyn_tol and sx <= tol and su <= tol


def riccati_lqr(sys, cost, max_iter=10000, tol=1e-12):
    """Fixed point of the discrete Riccati recursion and its LQR gain.

    Iterates P <- Q + A'PA - A'PB (R + B'PB)^{-1} B'PA from P = Q until
    the max-abs update falls below tol.  Returns (P, K) with the
    convention u = K x, so the closed loop is A + B K.  Divergence or
    stagnation past max_iter raises, since (A, B) stabilizability is not
    checked up front.
    """
    A, B = sys.A, sys.B
    Q, R = cost.Q, cost.R
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ gain
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise ArithmeticError("Riccati iteration diverged")
        if np.abs(P_next - P).max() <= tol * (1.0 + np.abs(P).max()):
            P = P_next
            break
        P = P_next
    else:
        raise ArithmeticError("Riccati iteration did not converge in %d steps" % max_iter)
    BtP = B.T @ P
    K = -np.linalg.solve(R + BtP @ B, BtP @ A)
    if np.abs(np.linalg.eigvals(A + B @ K)).max() >= 1.0:
        raise ArithmeticError("Riccati gain failed to stabilize the closed loop")
    return P, K
