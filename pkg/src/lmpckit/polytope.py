"""Half-space polyhedron kernel.

Polyhedra are {z : H z <= h} with rows normalized to unit norm on
construction (tolerances then mean the same thing on every row).  All
certificates come from LPs: redundancy removal maximizes each row
subject to the others, projection is Fourier-Motzkin with per-step
redundancy removal, and the invariant-set iterations stop on LP-verified
set equality.  Vertex enumeration is deliberately limited to the plane.
"""

import numpy as np
from dataclasses import dataclass

from . import qp


class EmptySetError(Exception):
    """The polyhedron contains no points."""


class UnboundedSetError(Exception):
    """Unbounded where boundedness is required."""


class ProjectionOverflowError(Exception):
    """Fourier-Motzkin intermediate row count exceeded the cap."""


@dataclass
class Polyhedron:
    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if H.shape[0] != len(h):
            raise ValueError("row count mismatch between H and h")
        if H.size and not np.all(np.isfinite(H)) or not np.all(np.isfinite(h)):
            raise ValueError("non-finite entries in half-space data")
        norms = np.linalg.norm(H, axis=1) if H.shape[0] else np.zeros(0)
        zero = norms <= 1e-12
        if np.any(zero & (h < -1e-12)):
            raise ValueError("trivially infeasible all-zero row")
        # all-zero rows with nonnegative offset say nothing; drop them
        keep = ~zero
        H, h, norms = H[keep], h[keep], norms[keep]
        if H.shape[0]:
            H = H / norms[:, None]
            h = h / norms
        self.H = H
        self.h = h

    @property
    def dim(self):
        return self.H.shape[1]

    @property
    def nrows(self):
        return self.H.shape[0]


def contains(P, z, tol=1e-7):
    """Membership test H z <= h + tol on every row."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if len(z) != P.dim:
        raise ValueError("point dimension %d does not match set dimension %d"
                         % (len(z), P.dim))
    if not P.nrows:
        return True
    return bool(np.all(P.H @ z - P.h <= tol))


def _assert_nonempty(P):
    sol = qp.solve_lp(np.zeros(P.dim), A_in=P.H, b_in=P.h)
    if sol.status == qp.INFEASIBLE:
        raise EmptySetError("polyhedron is empty")
    return sol.z


def remove_redundancy(P, tol=1e-9):
    """Drop every row whose removal leaves the point set unchanged.

    Each candidate row is maximized subject to the other retained rows
    (capped at its own offset plus one so the LP stays bounded); the row
    is redundant iff the optimum stays within tol of the offset.
    Processing in row order makes the result deterministic and leaves an
    irredundant description.
    """
    _assert_nonempty(P)
    H, h = P.H, P.h
    m = P.nrows
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        others = np.flatnonzero(keep & (np.arange(m) != i))
        A = np.vstack([H[others], H[i][None, :]])
        b = np.concatenate([h[others], [h[i] + 1.0]])
        sol = qp.solve_lp(-H[i], A_in=A, b_in=b)
        if sol.status != qp.OPTIMAL:
            # cannot certify redundancy; keep the row
            continue
        if -sol.value <= h[i] + tol:
            keep[i] = False
    return Polyhedron(H[keep], h[keep])


def support(P, direction):
    """Support value and maximizer max d'z over P."""
    d = np.asarray(direction, dtype=float).reshape(-1)
    if len(d) != P.dim:
        raise ValueError("direction dimension mismatch")
    sol = qp.solve_lp(-d, A_in=P.H, b_in=P.h)
    if sol.status == qp.INFEASIBLE:
        raise EmptySetError("polyhedron is empty")
    if sol.status == qp.UNBOUNDED:
        raise UnboundedSetError("unbounded in the given direction")
    if sol.status != qp.OPTIMAL:
        raise RuntimeError("support LP failed with status %s" % sol.status)
    return -sol.value, sol.z


def project_fm(P, keep_dims, row_cap=20000):
    """Exact orthogonal projection onto the kept coordinates.

    Eliminates the complementary dimensions one at a time by
    Fourier-Motzkin pairing, removing redundant rows after every
    elimination so intermediate descriptions stay small.  Raises
    ProjectionOverflowError if a step would exceed row_cap rows.
    """
    keep_dims = list(keep_dims)
    if len(keep_dims) == 0:
        raise ValueError("keep_dims must not be empty")
    if len(set(keep_dims)) != len(keep_dims) or \
            any(k < 0 or k >= P.dim for k in keep_dims):
        raise ValueError("keep_dims must be distinct indices into 0..%d" % (P.dim - 1))
    H, h = P.H.copy(), P.h.copy()
    cols = list(range(P.dim))
    for j in sorted(set(range(P.dim)) - set(keep_dims)):
        cj = cols.index(j)
        c = H[:, cj]
        zero = np.abs(c) <= 1e-12
        pos = np.flatnonzero(c > 1e-12)
        neg = np.flatnonzero(c < -1e-12)
        n_new = int(zero.sum()) + len(pos) * len(neg)
        if n_new > row_cap:
            raise ProjectionOverflowError(
                "elimination of dim %d would create %d rows (cap %d)"
                % (j, n_new, row_cap))
        blocks_H = [H[zero]]
        blocks_h = [h[zero]]
        if len(pos) and len(neg):
            Hp = H[pos] / c[pos, None]
            hp = h[pos] / c[pos]
            Hn = H[neg] / c[neg, None]
            hn = h[neg] / c[neg]
            # every (lower bound, upper bound) pair combines into one row
            comb_H = (Hp[:, None, :] - Hn[None, :, :]).reshape(-1, H.shape[1])
            comb_h = (hp[:, None] - hn[None, :]).reshape(-1)
            blocks_H.append(comb_H)
            blocks_h.append(comb_h)
        H = np.vstack(blocks_H)
        h = np.concatenate(blocks_h)
        H = np.delete(H, cj, axis=1)
        cols.remove(j)
        norms = np.linalg.norm(H, axis=1) if H.shape[0] else np.zeros(0)
        degenerate = norms <= 1e-12
        if np.any(degenerate & (h < -1e-9)):
            raise EmptySetError("projection is empty")
        H, h = H[~degenerate], h[~degenerate]
        if H.shape[0]:
            reduced = remove_redundancy(Polyhedron(H, h))
            H, h = reduced.H.copy(), reduced.h.copy()
    perm = [cols.index(k) for k in keep_dims]
    return Polyhedron(H[:, perm] if H.shape[0] else np.zeros((0, len(perm))), h)


def vertices_2d(P, tol=1e-7, dedup_tol=1e-8):
    """Extreme points of a bounded planar polyhedron, counter-clockwise.

    Every pair of rows is intersected; candidates failing membership are
    discarded.  The list starts at the lexicographically smallest vertex
    so identical sets serialize identically.
    """
    if P.dim != 2:
        raise ValueError("vertex enumeration is limited to dim 2")
    _assert_nonempty(P)
    for d in (np.array([1.0, 0.0]), np.array([-1.0, 0.0]),
              np.array([0.0, 1.0]), np.array([0.0, -1.0])):
        support(P, d)  # raises UnboundedSetError when unbounded
    H, h = P.H, P.h
    pts = []
    for i in range(P.nrows):
        for j in range(i + 1, P.nrows):
            det = H[i, 0] * H[j, 1] - H[i, 1] * H[j, 0]
            if abs(det) <= 1e-10:
                continue
            v = np.linalg.solve(H[[i, j]], h[[i, j]])
            if contains(P, v, tol):
                pts.append(v)
    if not pts:
        raise EmptySetError("no vertices found (degenerate description)")
    uniq = []
    for v in pts:
        if all(np.abs(v - w).max() > dedup_tol for w in uniq):
            uniq.append(v)
    uniq = np.asarray(uniq)
    if len(uniq) > 2:
        center = uniq.mean(axis=0)
        ang = np.arctan2(uniq[:, 1] - center[1], uniq[:, 0] - center[0])
        uniq = uniq[np.argsort(ang, kind="stable")]
    start = int(np.lexsort((uniq[:, 1], uniq[:, 0]))[0])
    return np.roll(uniq, -start, axis=0)


def polygon_area(vertices):
    """Shoelace area of a CCW vertex list."""
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def pre_set(target, sys, cons):
    """States in X steerable into the target by one admissible input.

    {x in X : exists u in U with A x + B u in target}, realized by
    lifting to (x, u), intersecting all three row families, and
    projecting the input coordinates back out.
    """
    if target.dim != sys.n:
        raise ValueError("target dimension mismatch")
    n, d = sys.n, sys.d
    rows = []
    rhs = []
    if cons.F_x.shape[0]:
        rows.append(np.hstack([cons.F_x, np.zeros((cons.F_x.shape[0], d))]))
        rhs.append(cons.b_x)
    if cons.F_u.shape[0]:
        rows.append(np.hstack([np.zeros((cons.F_u.shape[0], n)), cons.F_u]))
        rhs.append(cons.b_u)
    if target.nrows:
        rows.append(np.hstack([target.H @ sys.A, target.H @ sys.B]))
        rhs.append(target.h)
    lifted = Polyhedron(np.vstack(rows), np.concatenate(rhs))
    return project_fm(lifted, keep_dims=list(range(n)))


def _sets_equal_2d(P1, P2, tol):
    """Mutual vertex membership within tol (planar sets only)."""
    try:
        v1 = vertices_2d(P1)
        v2 = vertices_2d(P2)
    except EmptySetError:
        return False
    return all(contains(P2, v, tol) for v in v1) and \
        all(contains(P1, v, tol) for v in v2)


def max_ctrl_invariant(sys, cons, max_iter=100, set_tol=1e-7):
    """Largest set of states from which constraints can be respected forever.

    Iterates K <- pre_set(K) from the state constraint set; iterates are
    nested decreasing.  Returns (set, converged); the iteration need not
    terminate finitely, hence the cap and the flag.
    """
    K = Polyhedron(cons.F_x, cons.b_x)
    for _ in range(max_iter):
        K_next = pre_set(K, sys, cons)
        if sys.n == 2 and _sets_equal_2d(K, K_next, set_tol):
            return K_next, True
        if sys.n != 2 and K_next.nrows == K.nrows and \
                np.allclose(K_next.H, K.H, atol=set_tol) and \
                np.allclose(K_next.h, K.h, atol=set_tol):
            return K_next, True
        K = K_next
    return K, False


def max_pos_invariant(sys, K_gain, cons, max_iter=500, set_tol=1e-9):
    """Maximal positively invariant set for the closed loop A + B K.

    Starts from {x in X : K x in U} and keeps adding the image of each
    row under the closed-loop map until no new row cuts anything off
    (finite determination, checked by per-row support LPs).  Returns
    (set, converged).
    """
    K_gain = np.atleast_2d(np.asarray(K_gain, dtype=float))
    Acl = sys.A + sys.B @ K_gain
    if np.abs(np.linalg.eigvals(Acl)).max() >= 1.0:
        raise ValueError("closed loop A + B K is not stable")
    rows = [cons.F_x]
    rhs = [cons.b_x]
    if cons.F_u.shape[0]:
        rows.append(cons.F_u @ K_gain)
        rhs.append(cons.b_u)
    omega = remove_redundancy(Polyhedron(np.vstack(rows), np.concatenate(rhs)))
    for _ in range(max_iter):
        cand_H = omega.H @ Acl
        cand_h = omega.h
        norms = np.linalg.norm(cand_H, axis=1)
        ok = norms > 1e-12
        cand_H, cand_h = cand_H[ok] / norms[ok, None], cand_h[ok] / norms[ok]
        new_rows = []
        for r_H, r_h in zip(cand_H, cand_h):
            val, _ = support(omega, r_H)
            if val > r_h + set_tol:
                new_rows.append((r_H, r_h))
        if not new_rows:
            return omega, True
        H = np.vstack([omega.H] + [r[0][None, :] for r in new_rows])
        h = np.concatenate([omega.h] + [[r[1]] for r in new_rows])
        omega = remove_redundancy(Polyhedron(H, h))
    return omega, False
