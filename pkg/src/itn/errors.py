"""Exception types shared across the package."""


class ItnError(Exception):
    """Base class for package errors."""


class DimensionError(ItnError, ValueError):
    """Shape or rank mismatch between operands."""


class NumericError(ItnError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DegenerateBatchError(ItnError, ValueError):
    """Batch too small for the requested statistic (e.g. batchnorm with N=1)."""


class LabelError(ItnError, ValueError):
    """Label outside the valid range for the classifier mode."""


class ArgumentError(ItnError, ValueError):
    """Invalid argument value (empty batch, bad fraction, ...)."""


class DataFormatError(ItnError, ValueError):
    """Malformed container or IDX file (bad magic, truncation, mismatch)."""


class SupportError(ItnError, ValueError):
    """Discrete distribution support violation."""


class TrackerError(ItnError, ValueError):
    """Threshold tracker queried before any history was recorded."""


class SamplerFault(ItnError, RuntimeError):
    """Langevin chain produced non-finite values; chain discarded."""


class ExplorerFault(ItnError, RuntimeError):
    """Exploration objective went non-finite; predictor state was restored."""


class ConfigError(ItnError, ValueError):
    """Unknown or malformed configuration key/value."""
