"""Exception hierarchy shared across the planning library.

Everything raised on purpose by this package derives from PlanningError so
callers (and the CLI) can separate expected failure modes from bugs.
"""


class PlanningError(Exception):
    """Base class for all library-specific failures."""


class ConfigError(PlanningError):
    """Run configuration is malformed or inconsistent."""


class NoSolution(PlanningError):
    """A requested pose or constraint cannot be satisfied at all."""


class LimitViolation(NoSolution):
    """A solution exists mathematically but lies outside joint limits.

    Subclasses NoSolution: from the caller's point of view the pose is
    not achievable by the physical arm.
    """


class NonConvergence(PlanningError):
    """An iterative solve exhausted its iteration budget."""


class DerivativeInconsistency(PlanningError):
    """Analytic and finite-difference derivatives disagree beyond tolerance."""


class NoHit(PlanningError):
    """A boundary ray never crosses the forbidden-region boundary."""


class IKFailure(PlanningError):
    """Inverse kinematics failed for a mapped boundary point.

    Carries the grid direction so mapping failures are attributable.
    """

    def __init__(self, message: str, theta: float | None = None,
                 phi: float | None = None):
        super().__init__(message)
        self.theta = theta
        self.phi = phi


class DegenerateInput(PlanningError):
    """Input point set is degenerate (duplicates, coplanar, too few points)."""


class Unreachable(PlanningError):
    """No finite-cost path exists between the requested graph nodes."""


class RejectionBudgetExceeded(PlanningError):
    """Rejection sampling failed to find enough free samples."""


class AtBoundary(PlanningError):
    """Barrier term evaluated exactly on the forbidden boundary."""


class EmptyMesh(PlanningError):
    """A boundary mesh query was issued against a mesh with no vertices."""


class SingularJacobian(PlanningError):
    """Kinematic Jacobian is rank-deficient where full rank is required."""


class ZeroGradient(PlanningError):
    """Implicit-surface gradient vanished where a normal is required."""
