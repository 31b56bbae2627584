"""Exception hierarchy shared across the package.

The command-line layer maps these onto process exit codes: configuration
problems exit 1, data problems exit 2, numeric failures exit 3.
"""


class SicdnError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SicdnError):
    """Invalid configuration value or combination."""


class ContractError(SicdnError):
    """An API precondition was violated by the caller."""


class DimensionError(ContractError):
    """Operands have incompatible shapes."""


class DataError(SicdnError):
    """A dataset could not be read or is structurally unusable."""


class LayoutError(DataError):
    """Dataset directory layout does not match the expected structure."""


class DecodeError(DataError):
    """An image file exists but could not be decoded."""


class CheckpointError(DataError):
    """A checkpoint file is corrupt or does not match the model."""


class NumericError(SicdnError):
    """A computation produced or received non-finite values."""


class DomainError(NumericError):
    """An input lies outside an operation's mathematical domain."""
