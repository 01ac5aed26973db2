"""Exception types shared across the package."""


class R2NError(Exception):
    pass


class ShapeError(R2NError, ValueError):
    """Array dimensions do not line up with the model parameters."""


class ConfigError(R2NError, ValueError):
    """Invalid hyperparameter or experiment configuration."""


class DataError(R2NError, ValueError):
    """Malformed or unusable input data."""


class KinkError(R2NError, RuntimeError):
    """A gradient check could not get away from a non-differentiable point."""


class TrainingError(R2NError, RuntimeError):
    pass
