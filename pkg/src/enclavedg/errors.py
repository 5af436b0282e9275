"""Exception types shared across the package."""


class EnclaveDgError(Exception):
    """Base class for all package errors."""


class CapacityError(EnclaveDgError):
    """Mesh depth would exceed the configured maximum."""


class InvalidTargetError(EnclaveDgError):
    """Operation applied to a node of the wrong kind."""


class NotCoarsenableError(EnclaveDgError):
    """Coarsening precondition violated (a child is itself refined)."""


class NotReadyError(EnclaveDgError):
    """Data dependency not satisfied yet (e.g. predictor still pending)."""


class ConfigError(EnclaveDgError):
    """Invalid experiment configuration.  Maps to exit code 2."""


class NumericalError(EnclaveDgError):
    """NaN/inf detected in the solution.  Maps to exit code 3."""


class SchedulingError(EnclaveDgError):
    """Scheduling invariant violation or deadlock.  Maps to exit code 4."""
