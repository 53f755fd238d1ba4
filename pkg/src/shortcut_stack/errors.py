"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class UsageError(RuntimeError):
    """An API was called out of order or with missing state."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown, or out of range."""


class DataError(ValueError):
    """Input data (corpus file, embedding file, token) is malformed."""


class CheckpointError(ValueError):
    """A checkpoint file could not be read or does not match the model."""


class NonFiniteError(RuntimeError):
    """A loss or gradient became NaN/inf during training."""


class GradCheckError(RuntimeError):
    """The gradient check could not be run (e.g. non-deterministic loss)."""
