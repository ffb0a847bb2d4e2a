"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
NumericError -> 3, DataFormatError / OSError -> 4.
"""


class MixedFlowError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MixedFlowError):
    """Invalid configuration or incompatible options."""


class DimensionError(ConfigError):
    """Array shapes do not line up with the configured dimensions."""


class NumericError(MixedFlowError):
    """A computation produced non-finite or otherwise unusable values."""


class DataFormatError(MixedFlowError):
    """A file or record does not follow its documented schema."""
