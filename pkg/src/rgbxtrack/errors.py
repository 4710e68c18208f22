"""Exception types shared across the package."""


class TrackError(Exception):
    """Base class for all package errors."""


class DimensionError(TrackError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(TrackError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ConfigError(TrackError, ValueError):
    """Invalid configuration value or inconsistent settings."""


class UsageError(TrackError, RuntimeError):
    """An API was called in a state where it is not allowed."""


class EmptyRegionError(TrackError, ValueError):
    """A region of interest contains no search tokens."""


class ArtifactError(TrackError, OSError):
    """A file could not be read, parsed or written."""
