"""Exception hierarchy shared across the package.

CLI exit-code mapping lives in cli.py: config/usage -> 1, data -> 2,
numeric -> 3.
"""


class BsmambaError(Exception):
    """Base class for all package errors."""


class ShapeError(BsmambaError):
    """Operand shapes do not conform (broadcast, matmul, conv, ...)."""


class NumericError(BsmambaError):
    """Non-finite values produced, or numeric failure during training."""


class DomainError(NumericError):
    """Input outside an op's mathematical domain (e.g. log of x <= 0)."""


class ContractError(BsmambaError):
    """API misuse, e.g. backward() on a non-scalar tensor."""


class PermutationError(BsmambaError):
    """Index list is not a valid permutation."""


class UnsupportedSizeError(BsmambaError):
    """Spatial size outside the supported set (radix-2 FFT needs powers of two)."""


class ConfigError(BsmambaError):
    """Invalid configuration value or config-file syntax."""


class DataError(BsmambaError):
    """Dataset / sidecar / image-file problems."""


class CheckpointError(BsmambaError):
    """Checkpoint file is corrupt or does not match the architecture."""
