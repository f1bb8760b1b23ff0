"""Exception types shared across the package."""


class GazeDQNError(Exception):
    """Base class for all package errors."""


class ConfigError(GazeDQNError):
    """Invalid configuration (zero dimensions, impossible geometry, ...)."""


class DimensionError(GazeDQNError):
    """Array shape does not match what an operation expects."""


class StateError(GazeDQNError):
    """Gaze index or agent state outside the valid range."""


class NumericError(GazeDQNError):
    """Non-finite values where finite ones are required."""


class ValidationError(GazeDQNError):
    """A case or dataset violates its invariants."""


class SamplingError(GazeDQNError):
    """Sampling requested from an empty replay memory."""
