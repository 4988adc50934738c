"""Exception types shared across the pipeline."""


class HeogError(Exception):
    """Base class for all pipeline errors."""


class DataError(HeogError):
    """Input data cannot be processed (maps to CLI exit code 3)."""


class ConfigError(HeogError):
    """Invalid configuration or usage (maps to CLI exit code 2)."""


class DegenerateWindow(DataError):
    pass


class InvalidFilterConfig(ConfigError):
    pass


class DegenerateCalibration(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptyClass(DataError):
    pass


class OutOfOrderSample(DataError):
    pass


class TruthOutsideTrace(DataError):
    pass


class EmptyTrace(UserWarning):
    """Warned when a trace is shorter than the requested window."""
