"""Exception types shared by all modules."""


class EllipsoidLabError(Exception):
    """Base class for library errors."""


class DomainError(EllipsoidLabError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ValidationError(EllipsoidLabError, ValueError):
    """A user-supplied object violates a declared invariant."""


class ConfigError(EllipsoidLabError, ValueError):
    """Malformed or unsupported configuration."""


class ConvergenceError(EllipsoidLabError, RuntimeError):
    """An iterative method hit its iteration cap."""


class DistortionError(DomainError):
    """The distortion Lambda/lambda is too large for the requested exponent."""

    def __init__(self, message, threshold):
        super().__init__(message)
        self.threshold = threshold
