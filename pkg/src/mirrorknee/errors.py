"""Exception types shared across the package."""


class MirrorKneeError(Exception):
    """Base class for all package errors."""


class ConfigError(MirrorKneeError, ValueError):
    """Invalid or unknown configuration entry."""


class NonTermination(MirrorKneeError):
    """A phase ran past its duration cap."""


class FailedCycle(MirrorKneeError):
    """A gait cycle could not be completed (some phase hit its duration cap)."""

    def __init__(self, phase, message=None):
        self.phase = phase
        super().__init__(message or f"phase {phase.name} exceeded its duration cap")


class MalformedTrajectory(MirrorKneeError, ValueError):
    """Trajectory lacks the extrema or annotations needed for feature extraction."""


class InsufficientData(MirrorKneeError, ValueError):
    """Too few samples for the requested computation."""


class IllConditioned(MirrorKneeError):
    """Least-squares regressor is too ill-conditioned even after regularization."""


class SingularHuu(MirrorKneeError, ValueError):
    """Action-curvature block of the Q form is not positive definite."""


class OracleDivergence(MirrorKneeError):
    """Riccati fixed-point iteration did not converge."""


class TrialAborted(MirrorKneeError):
    """Too many consecutive failed cycles in a trial."""
