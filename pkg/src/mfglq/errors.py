"""Exception types shared across the package."""


class MfglqError(Exception):
    """Base class for all package errors."""


class StructuralError(MfglqError):
    """Dimension mismatch or malformed input that prevents computation."""


class MetricError(MfglqError):
    """Weight matrix is not symmetric positive definite."""


class NumericError(MfglqError):
    """An iterative or linear-algebra routine failed to converge."""


class DivergenceError(MfglqError):
    """A simulated quantity became non-finite.

    Carries the location (path, type, particle, node) of the first offending
    entry when known.
    """

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class CapacityError(MfglqError):
    """Requested allocation exceeds the configured memory cap."""


class ConfigError(MfglqError):
    """Configuration file cannot be parsed or is inconsistent."""
