"""Exception types shared across the package."""


class PgdError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PgdError):
    """Invalid configuration: bad dimensions, unknown keys, out-of-range values."""


class AutodiffError(PgdError):
    """Non-finite values or structural problems detected on the tape."""


class CheckpointError(PgdError):
    """Checkpoint file cannot be read back: bad version, checksum, or truncation."""


class SchemaError(PgdError):
    """A data file does not conform to its documented schema."""


class TrainingDivergedError(PgdError):
    """Training loss blew up; carries the loss history for diagnosis."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history or []


class MetricUndefinedError(PgdError):
    """A metric is mathematically undefined for the given inputs."""
