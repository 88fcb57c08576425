"""Exception types shared across the toolkit.

InvariantViolation marks conditions the theory says cannot happen in a
correct run (cost increase, lost feasibility, inconsistent stored data).
The CLI maps these to exit code 3, configuration problems to exit code 2.
"""


class ConfigError(Exception):
    """Bad or missing configuration input."""


class InvariantViolation(Exception):
    """A guaranteed property failed at runtime."""


class MonotonicityError(InvariantViolation):
    """Closed-loop iteration cost increased beyond tolerance."""


class FeasibilityLostError(InvariantViolation):
    """The policy QP became infeasible along a closed-loop run."""


class TrajectoryConsistencyError(InvariantViolation):
    """Stored trajectory data violates dynamics or constraints."""


class NoInitialTrajectoryError(RuntimeError):
    """No feasible convergent trajectory exists from the given start.

    The start state lies outside the region the long-horizon seed
    problem can steer to the origin; not an invariant failure.
    """


class NonConvergenceError(RuntimeError):
    """A closed-loop run failed to enter the truncation ball in time."""


class SegmentInfeasibleError(RuntimeError):
    """A fixed-endpoint segment problem has no feasible trajectory."""
