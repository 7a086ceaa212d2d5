"""Exception types shared across the engine."""


class GradecoreError(Exception):
    """Base class for all gradecore errors."""


class ShapeError(GradecoreError):
    """Array shapes are incompatible with the requested operation."""


class NumericError(GradecoreError):
    """An operation would produce non-finite values (division by zero, overflow)."""


class StateError(GradecoreError):
    """Operation called in the wrong order (e.g. backward before forward)."""


class ConfigError(GradecoreError):
    """A configuration value is out of its legal range."""


class ValidationError(GradecoreError):
    """Input data violates a documented precondition (bad one-hot row, pixel range...)."""


class DataError(GradecoreError):
    """Dataset ingestion failure: empty tree, bad cache file, unreadable inputs."""


class CheckpointError(GradecoreError):
    """Checkpoint file cannot be read: bad magic, version, CRC or truncation."""
