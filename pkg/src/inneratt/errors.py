"""Shared exception types."""


class DimensionError(ValueError):
    """Array shapes do not satisfy an operation's requirements."""


class ContractError(ValueError):
    """A call violated an operation's preconditions."""


class ConfigError(ValueError):
    """Invalid configuration document. Carries the offending key."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class CheckpointError(Exception):
    """Base class for checkpoint persistence failures."""


class BadMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class TruncatedCheckpointError(CheckpointError):
    """File ended before the declared contents were read."""


class VersionMismatchError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""
