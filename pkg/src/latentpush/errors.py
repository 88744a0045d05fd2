"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class InputError(ValueError):
    """An operation was called with inputs violating its contract."""


class CalibrationError(RuntimeError):
    """Reward calibration could not be fitted (degenerate position code)."""


class CheckpointFormatError(RuntimeError):
    """Checkpoint file is corrupt, truncated, or of an unknown version."""


class DependencyError(RuntimeError):
    """A pipeline stage is missing an upstream artifact."""
