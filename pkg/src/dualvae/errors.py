"""Exception types shared across the package.

Exit-code mapping used by the CLI: usage/config -> 1, data -> 2, numeric -> 3.
"""


class DualVaeError(Exception):
    """Base class for all package errors."""


class ShapeError(DualVaeError):
    """Tensor operands have incompatible shapes."""


class DomainError(DualVaeError):
    """Input outside the mathematical domain of an operation (e.g. log of <= 0)."""


class ContractError(DualVaeError):
    """An API precondition was violated (e.g. backward from a non-scalar node)."""


class NumericError(DualVaeError):
    """Non-finite values where finite ones are required."""


class ConfigError(DualVaeError):
    """Invalid configuration value or unknown configuration key."""


class DataError(DualVaeError):
    """Malformed or unusable input data."""


class CheckpointError(DualVaeError):
    """Unreadable, corrupted or incompatible checkpoint file."""
