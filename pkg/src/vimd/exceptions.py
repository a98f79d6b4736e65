"""Exception types raised across the package."""


class VimdError(Exception):
    """Base class for all package errors."""


class ShapeError(VimdError, ValueError):
    """Tensor or array dimensions are incompatible with an operation."""


class DomainError(VimdError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractError(VimdError, RuntimeError):
    """A pre-condition on the calling protocol was violated."""


class CheckpointError(VimdError, IOError):
    """A checkpoint file is malformed or incompatible with the target model."""


class ImageIOError(VimdError, IOError):
    """An image file is missing or cannot be decoded."""


class ConfigError(VimdError, ValueError):
    """A configuration file or option is invalid."""
