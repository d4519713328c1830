"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2,
DataValidationError -> 3, NumericError -> 4.
"""


class DisenGCDError(Exception):
    """Base class for all package errors."""


class ShapeError(DisenGCDError):
    """Operand shapes are inconsistent for an operation or a stored field."""


class ContractError(DisenGCDError):
    """A documented precondition was violated by the caller."""


class NumericError(DisenGCDError):
    """A non-finite value appeared where a finite one is required."""


class DataValidationError(DisenGCDError):
    """Input data failed structural validation."""


class ConfigError(DisenGCDError):
    """A run configuration is invalid or unrealizable."""


class CheckpointError(DisenGCDError):
    """A checkpoint file cannot be read back as a model."""
