"""Exception hierarchy shared across the package."""


class BprgError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(BprgError):
    """Tensor or layer shapes do not compose."""


class InputError(BprgError):
    """Caller supplied out-of-range or malformed values."""


class UsageError(BprgError):
    """An operation was invoked outside its contract."""


class ConfigError(BprgError):
    """Experiment configuration is invalid."""


class FormatError(BprgError):
    """A file (IDX, checkpoint, CSV) does not match its binary/text format."""


class NumericError(BprgError):
    """A tensor operation produced NaN or Inf."""
