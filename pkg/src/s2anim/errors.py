"""Exception types shared across the package."""


class S2AError(Exception):
    """Base class for all package errors."""


class ShapeError(S2AError, ValueError):
    """Tensor extents do not agree."""


class ConfigError(S2AError, ValueError):
    """Invalid hyperparameter or configuration value."""


class InvalidInputError(S2AError, ValueError):
    """Input data violates an operation precondition."""


class ContainerError(S2AError):
    """Malformed or unsupported S2A1 container."""


class TrainingDiverged(S2AError, RuntimeError):
    """Loss became non-finite during training."""
