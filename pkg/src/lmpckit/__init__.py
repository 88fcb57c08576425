"""Learning MPC toolkit for constrained linear-quadratic systems.

Closed-loop trajectories are folded into a sampled safe set whose
cost-to-go interpolation serves as terminal set and terminal cost of a
finite-horizon tracking QP.  Iterating the resulting policy drives the
closed-loop cost down monotonically until the trajectory reaches a fixed
point, which can then be certified against a long-horizon optimum through
its KKT system.  A separate enlargement loop grows the region of
attraction by seeding new runs from the boundary of the current one.

Modules
-------
model     system, cost and constraint containers, Riccati iteration
polytope  H-representation polytopes: redundancy, projection, invariance
qp        dense convex QP/LP solving with certified multipliers
safeset   sampled safe set and cost-to-go interpolation
lmpc      finite-horizon policy, closed-loop iteration, fixed point
certify   compact segment QPs, LICQ, multiplier stitching, optimality
enlarge   region-of-attraction computation and domain enlargement
report    delimited artifact files and figures
cli       command line entry point
"""

from ._version import __version__

__all__ = ["__version__"]
