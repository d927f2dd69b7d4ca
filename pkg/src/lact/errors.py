class LactError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(LactError, ValueError):
    pass


class NumericError(LactError, FloatingPointError):
    pass


class ScheduleError(LactError, ValueError):
    pass


class ConfigError(LactError, ValueError):
    pass


class PartitionError(LactError, ValueError):
    pass
