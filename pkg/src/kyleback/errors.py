"""Exception taxonomy shared across the solver.

Plain ``ValueError`` is used for simple argument-domain mistakes (a quantile
level outside (0,1), a time outside [0,T], a value outside the range of the
price map).  The classes below mark failures that carry solver semantics and
that the command-line front end maps to distinct exit codes.
"""


class KyleBackError(Exception):
    """Base class for solver-specific failures."""


class BudgetError(KyleBackError):
    """The slope budget gamma*sigma^2*T*l was violated.

    Raised when model parameters break the admissibility bound, when a Picard
    iterate exceeds its Lipschitz cap, or when an expectation overflows in a
    way that only an inadmissible slope can produce.
    """


class ConvexityError(BudgetError):
    """Bracket expansion found no sign change: objective not strongly convex.

    A failed minimizer bracket on the representation functional signals a
    slope-budget breach, hence the subclassing.
    """


class ConvergenceError(KyleBackError):
    """The fixed-point iteration diverged (residual grew over 5 iterations)."""


class GridCoverageError(KyleBackError):
    """A density leaked too much mass off the spatial grid."""


class AssemblyError(KyleBackError):
    """A pricing-surface invariant failed after assembly."""


class StabilityError(KyleBackError):
    """PDE time stepping exceeded its step-halving cap."""


class GridExitError(KyleBackError):
    """Too many simulated steps were clamped at the spatial grid boundary."""


class DegenerateDistributionError(KyleBackError):
    """A conditional distribution was requested at t = T (a Dirac mass)."""


class SingularDriftError(KyleBackError):
    """The bridge drift was requested at t = T where it blows up."""


class MissingArtifactError(KyleBackError):
    """A pipeline stage needs an artifact that has not been produced yet."""
