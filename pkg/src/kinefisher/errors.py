"""Exception types raised across the library."""


class KinefisherError(Exception):
    """Base class for all library-specific errors."""


class InvalidArgumentError(KinefisherError, ValueError):
    """An input violates a documented precondition (shape, finiteness, range)."""


class ConcentrationOverflowError(KinefisherError):
    """A singular value exceeds S_CAP, past which the normalizer is not evaluated."""


class ModeUndefinedError(KinefisherError):
    """The distribution is uniform (F = 0), so no mode exists."""


class SamplerStallError(KinefisherError):
    """The rejection loop hit its iteration cap without accepting a proposal."""


class OptimizationFailureError(KinefisherError):
    """The fit diverged (non-finite loss). Carries the step trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class InsufficientObservationError(KinefisherError):
    """Too few visible joints to constrain a fit (fewer than 4)."""
