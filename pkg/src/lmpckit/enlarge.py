"""Region-of-attraction computation and vertex-driven safe-set growth.

The policy's region of attraction is the set of starts from which the
horizon-N problem with the sampled terminal set is feasible.  Growing
the safe set grows the region, and the enlargement loop exploits that:
compute the region's extreme points, run the closed loop from each one,
fold the new trajectories in, repeat.  Starting from the bare origin
this bootstraps a controller with no initial demonstration at all.

All region computations here eliminate the predicted states through
the dynamics, so the lifted feasibility sets live over (x_0, inputs,
terminal weights) and stay small; planar regions are then traced by
adaptive support sampling rather than general projection.
"""

from dataclasses import dataclass, field

import numpy as np

from . import lmpc, model, polytope, safeset
from .errors import (ConfigError, FeasibilityLostError, InvariantViolation,
                     NonConvergenceError)
from .polytope import EmptySetError, Polyhedron, UnboundedSetError
from . import qp


def _rot90(d):
    return np.array([-d[1], d[0]])


@dataclass
class EnlargementSchedule:
    """Outer-loop budget and seed-selection mode.

    In exact mode the seeds of each outer step are the vertices of the
    current region of attraction; in directional mode they are the
    farthest reachable points along user-chosen directions, each
    constrained to the line through the origin orthogonal to the
    direction's complement.  Complements default to the 90-degree
    rotation, the canonical choice in the plane.
    """
    M: int
    mode: str = "exact"
    directions: list = None
    perps: list = None

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 0:
            raise ConfigError("outer-loop count M must be a whole number")
        self.M = int(self.M)
        if self.mode not in ("exact", "directional"):
            raise ConfigError("mode must be 'exact' or 'directional'")
        if self.mode == "directional":
            if not self.directions:
                raise ConfigError("directional mode needs direction vectors")
            dirs = [np.asarray(d, dtype=float).reshape(-1)
                    for d in self.directions]
            if any(np.linalg.norm(d) <= 1e-12 for d in dirs):
                raise ConfigError("directions must be nonzero")
            dirs = [d / np.linalg.norm(d) for d in dirs]
            if self.perps is None:
                perps = [_rot90(d) for d in dirs]
            else:
                perps = [np.asarray(p, dtype=float).reshape(-1)
                         for p in self.perps]
                if len(perps) != len(dirs):
                    raise ConfigError("one complement per direction")
                if any(np.linalg.norm(p) <= 1e-12 for p in perps):
                    raise ConfigError("complements must be nonzero")
                perps = [p / np.linalg.norm(p) for p in perps]
                for d, p in zip(dirs, perps):
                    if abs(d @ p) > 1e-10:
                        raise ConfigError(
                            "complement not orthogonal to its direction")
            self.directions = dirs
            self.perps = perps
        else:
            self.directions = None
            self.perps = None


@dataclass
class RoaResult:
    """One region of attraction, traced as an ordered planar polygon."""
    vertices: np.ndarray        # counter-clockwise, lexicographic start
    mode: str                   # seed-selection mode that produced the set
    iteration: int              # outer step the region belongs to

    @property
    def closed_polyline(self):
        return np.vstack([self.vertices, self.vertices[:1]])


@dataclass
class SeedRecord:
    outer_step: int
    seed: np.ndarray
    status: str                 # "folded" | "skipped-inside" | "failed"
    detail: str = ""


@dataclass
class EnlargementOutcome:
    safe_set: object
    roa_sequence: list          # one RoaResult per outer step, post-fold
    seed_log: list = field(default_factory=list)

    @property
    def final_roa(self):
        return self.roa_sequence[-1] if self.roa_sequence else None


def _condensed_maps(sys, N):
    # x_k = pows[k] x_0 + Gamma[k] u for the stacked input vector
    pows = [np.linalg.matrix_power(sys.A, k) for k in range(N + 1)]
    gammas = [np.zeros((sys.n, N * sys.d))]
    for k in range(1, N + 1):
        g = np.zeros((sys.n, N * sys.d))
        for j in range(k):
            g[:, j * sys.d:(j + 1) * sys.d] = pows[k - 1 - j] @ sys.B
        gammas.append(g)
    return pows, gammas


def _stage_rows(sys, cons, N, pows, gammas, extra):
    # state constraints on x_0..x_{N-1}, input constraints on u_0..u_{N-1},
    # over variables (x_0, u, <extra trailing block>)
    rows, rhs = [], []
    nu = N * sys.d
    for k in range(N):
        if cons.F_x.shape[0]:
            rows.append(np.hstack([cons.F_x @ pows[k], cons.F_x @ gammas[k],
                                   np.zeros((cons.F_x.shape[0], extra))]))
            rhs.append(cons.b_x)
        if cons.F_u.shape[0]:
            blk = np.zeros((cons.F_u.shape[0], sys.n + nu + extra))
            blk[:, sys.n + k * sys.d:sys.n + (k + 1) * sys.d] = cons.F_u
            rows.append(blk)
            rhs.append(cons.b_u)
    return rows, rhs


def _lifted_roa(sys, cons, ss, N):
    """Feasibility set of the horizon-N problem over (x_0, u, weights)."""
    if ss.is_empty:
        raise ValueError("safe set is empty")
    P = ss.support_points()
    S = P.shape[0]
    pows, gammas = _condensed_maps(sys, N)
    rows, rhs = _stage_rows(sys, cons, N, pows, gammas, S)
    # terminal state equals the weighted combination, weights on the simplex
    term = np.hstack([pows[N], gammas[N], -P.T])
    rows += [term, -term]
    rhs += [np.zeros(sys.n), np.zeros(sys.n)]
    one = np.concatenate([np.zeros(sys.n + N * sys.d), np.ones(S)])
    rows += [one[None, :], -one[None, :]]
    rhs += [np.ones(1), -np.ones(1)]
    gam = np.hstack([np.zeros((S, sys.n + N * sys.d)), -np.eye(S)])
    rows.append(gam)
    rhs.append(np.zeros(S))
    return Polyhedron(np.vstack(rows), np.concatenate(rhs))


def roa_contains(sys, cost, cons, ss, N, x0, tol=1e-7):
    """Feasibility of the horizon-N problem from x0, up to tol slack."""
    lifted = _lifted_roa(sys, cons, ss, N)
    x0 = np.asarray(x0, dtype=float).reshape(sys.n)
    pin = np.zeros((2 * sys.n, lifted.dim))
    pin[:sys.n, :sys.n] = np.eye(sys.n)
    pin[sys.n:, :sys.n] = -np.eye(sys.n)
    rhs = np.concatenate([x0 + tol, -x0 + tol])
    sol = qp.solve_lp(np.zeros(lifted.dim),
                      A_in=np.vstack([lifted.H, pin]),
                      b_in=np.concatenate([lifted.h, rhs]))
    if sol.status == qp.INFEASIBLE:
        return False
    if sol.status != qp.OPTIMAL:
        raise RuntimeError("membership LP failed with status %s" % sol.status)
    return True


def _support_x0(lifted, d):
    dfull = np.zeros(lifted.dim)
    dfull[:2] = d
    val, z = polytope.support(lifted, dfull)
    return float(val), z[:2].copy()


def _prune_collinear(pts, tol=1e-9):
    if len(pts) <= 2:
        return pts
    keep = []
    m = len(pts)
    for i in range(m):
        prev, cur, nxt = pts[i - 1], pts[i], pts[(i + 1) % m]
        cross = (cur[0] - prev[0]) * (nxt[1] - prev[1]) \
            - (cur[1] - prev[1]) * (nxt[0] - prev[0])
        if abs(cross) > tol * (1.0 + np.abs(nxt - prev).max()):
            keep.append(cur)
    return np.asarray(keep) if keep else pts[:1]


def compute_roa_2d(sys, cost, cons, ss, N, vertex_tol=1e-6,
                   max_directions=512):
    """Trace the planar region of attraction by adaptive support calls.

    Between two support maximizers the probe direction is the outward
    normal of their chord: a support value level with the chord proves
    the chord is a facet and closes the wedge in one call, anything
    higher is a new vertex to recurse on.  The call count therefore
    scales with the number of vertices found, not with an angular grid.
    The stage cost plays no role in feasibility; the argument is kept so
    all region functions share one calling shape.
    """
    if sys.n != 2:
        raise ValueError("exact region tracing is limited to the plane")
    lifted = _lifted_roa(sys, cons, ss, N)

    angles = np.linspace(0.0, 2.0 * np.pi, 9)[:-1]
    work = []
    for a in angles:
        d = np.array([np.cos(a), np.sin(a)])
        _, v = _support_x0(lifted, d)
        work.append((a, v))
    budget = max_directions - len(work)
    stack = [(work[i], work[(i + 1) % len(work)]) for i in range(len(work))]
    points = [v for _, v in work]
    while stack and budget > 0:
        (a1, v1), (a2, v2) = stack.pop()
        if np.abs(v1 - v2).max() <= 1e-9:
            continue
        a2u = a2 if a2 > a1 else a2 + 2.0 * np.pi
        chord = v2 - v1
        nrm = np.hypot(chord[0], chord[1])
        d = np.array([chord[1], -chord[0]]) / nrm
        ad = np.arctan2(d[1], d[0]) % (2.0 * np.pi)
        while ad < a1:
            ad += 2.0 * np.pi
        if not a1 < ad < a2u:
            # kinked numerics; the angular midpoint still splits the wedge
            ad = (a1 + a2u) / 2.0
            d = np.array([np.cos(ad), np.sin(ad)])
        val, v = _support_x0(lifted, d)
        budget -= 1
        if val <= d @ v1 + vertex_tol:
            continue
        points.append(v)
        stack.append(((a1, v1), (ad, v)))
        stack.append(((ad, v), (a2, v2)))

    pts = []
    for v in points:
        if all(np.abs(v - w).max() > 1e-8 for w in pts):
            pts.append(v)
    pts = np.asarray(pts)
    if len(pts) > 2:
        center = pts.mean(axis=0)
        ang = np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0])
        pts = pts[np.argsort(ang, kind="stable")]
        pts = _prune_collinear(pts)
    start = int(np.lexsort((pts[:, 1], pts[:, 0]))[0])
    pts = np.roll(pts, -start, axis=0)
    for v in pts:
        if not roa_contains(sys, cost, cons, ss, N, v, tol=1e-7):
            raise InvariantViolation(
                "traced region vertex %s fails the feasibility re-check"
                % np.array2string(v))
    return RoaResult(vertices=pts, mode="exact", iteration=-1)


def directional_extreme(sys, cost, cons, ss, N, d, d_perp=None):
    """Farthest feasible start along d on the line d_perp . x = 0."""
    d = np.asarray(d, dtype=float).reshape(-1)
    if np.linalg.norm(d) <= 1e-12:
        raise ValueError("direction must be nonzero")
    if d_perp is None:
        if sys.n != 2:
            raise ValueError("default complement exists only in the plane")
        d_perp = _rot90(d)
    d_perp = np.asarray(d_perp, dtype=float).reshape(-1)
    if abs(d @ d_perp) > 1e-10 * np.linalg.norm(d) * np.linalg.norm(d_perp):
        raise ValueError("complement is not orthogonal to the direction")
    lifted = _lifted_roa(sys, cons, ss, N)
    c = np.zeros(lifted.dim)
    c[:sys.n] = -d
    line = np.zeros((1, lifted.dim))
    line[0, :sys.n] = d_perp
    sol = qp.solve_lp(c, A_eq=line, b_eq=np.zeros(1),
                      A_in=lifted.H, b_in=lifted.h)
    if sol.status == qp.INFEASIBLE:
        raise EmptySetError("the line misses the region of attraction")
    if sol.status == qp.UNBOUNDED:
        raise UnboundedSetError("region unbounded along the direction")
    if sol.status != qp.OPTIMAL:
        raise RuntimeError("extreme-point LP failed with status %s"
                           % sol.status)
    return sol.z[:sys.n].copy()


def _origin_set(sys, cost):
    ss = safeset.SampledSafeSet(sys.n, cost)
    return safeset.add_trajectory(ss, np.zeros((1, sys.n)),
                                  np.zeros((0, sys.d)), sys=sys)


def run_enlargement(sys, cost, cons, schedule, N, config=None,
                    batch_fold=False):
    """Grow the safe set from the bare origin by seeding at extremes.

    Each outer step snapshots the safe set, derives seeds from it
    (region vertices in exact mode, directional extremes otherwise),
    rolls the closed loop under the snapshot policy from every seed not
    already inside the set, and folds the runs back in, one by one as
    they finish by default, or all at once after the step when
    batch_fold is set (the two differ only in how early a step's own
    trajectories can mark later seeds as covered).  Seeds whose runs
    fail to settle are recorded and skipped rather than fatal.
    """
    if config is None:
        config = lmpc.LmpcConfig(N=N)
    elif config.N != N:
        raise ConfigError("config horizon %d differs from N=%d"
                          % (config.N, N))
    ss = _origin_set(sys, cost)
    seq = []
    log = []
    roa = None
    for j in range(1, schedule.M + 1):
        snapshot = ss
        if schedule.mode == "exact":
            # the trace recorded after the previous fold is still current
            if roa is None:
                roa = compute_roa_2d(sys, cost, cons, snapshot, N)
            seeds = list(roa.vertices)
        else:
            seeds = [directional_extreme(sys, cost, cons, snapshot, N, d, p)
                     for d, p in zip(schedule.directions, schedule.perps)]
        pending = []
        for v in seeds:
            if safeset.contains(ss, v):
                log.append(SeedRecord(j, v, "skipped-inside"))
                continue
            try:
                run = lmpc.run_iteration(sys, cost, cons, snapshot, v, config)
            except (NonConvergenceError, InvariantViolation) as exc:
                log.append(SeedRecord(j, v, "failed", str(exc)))
                continue
            log.append(SeedRecord(j, v, "folded"))
            if batch_fold:
                pending.append(run)
            else:
                ss = safeset.add_trajectory(ss, run.states, run.inputs,
                                            trunc_tol=config.trunc_tol,
                                            sys=sys)
        for run in pending:
            ss = safeset.add_trajectory(ss, run.states, run.inputs,
                                        trunc_tol=config.trunc_tol, sys=sys)
        roa = RoaResult(vertices=compute_roa_2d(sys, cost, cons, ss,
                                                N).vertices,
                        mode=schedule.mode, iteration=j)
        seq.append(roa)
    return EnlargementOutcome(safe_set=ss, roa_sequence=seq, seed_log=log)


def baseline_mpc_roa(sys, cost, cons, N):
    """Feasibility region of the standard design: LQR terminal set.

    The terminal state must enter the maximal positively invariant set
    of the LQR closed loop; the region is the exact projection of the
    condensed feasibility set onto the start coordinates.
    """
    _, K = model.riccati_lqr(sys, cost)
    omega, converged = polytope.max_pos_invariant(sys, K, cons)
    if not converged:
        raise RuntimeError("invariant terminal set did not close")
    pows, gammas = _condensed_maps(sys, N)
    rows, rhs = _stage_rows(sys, cons, N, pows, gammas, 0)
    rows.append(np.hstack([omega.H @ pows[N], omega.H @ gammas[N]]))
    rhs.append(omega.h)
    lifted = Polyhedron(np.vstack(rows), np.concatenate(rhs))
    region = polytope.project_fm(lifted, keep_dims=list(range(sys.n)))
    verts = polytope.vertices_2d(region)
    return RoaResult(vertices=verts, mode="exact", iteration=-1)
