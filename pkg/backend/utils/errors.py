"""
Exception hierarchy for the appearance-splicing toolkit.
Every error carries the process exit code the command line reports for it.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class SpliceError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 1


class ConfigError(SpliceError, ValueError):
    """Invalid configuration, arguments or input shapes"""
    exit_code = EXIT_CONFIG


class VitConfigError(ConfigError):
    pass


class ShapeError(ConfigError):
    pass


class MissingLayerError(ConfigError, KeyError):
    def __str__(self):
        # KeyError would otherwise repr() the message
        return str(self.args[0]) if self.args else ""


class DegenerateKeyError(ConfigError):
    pass


class GridError(ConfigError):
    pass


class RankError(ConfigError):
    pass


class PairFileError(ConfigError):
    def __init__(self, message: str, line_number: int = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class CheckpointVersionError(ConfigError):
    pass


class SpliceIOError(SpliceError, OSError):
    """A file could not be read or written"""
    exit_code = EXIT_IO


class WeightsLoadError(SpliceIOError):
    pass


class ImageReadError(SpliceIOError):
    pass


class NumericalAbort(SpliceError, ArithmeticError):
    """An optimization produced a non-finite or diverging loss"""
    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, iteration: int = None, term: str = None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.term = term
        self.trace = list(trace) if trace is not None else []


class InversionDiverged(NumericalAbort):
    pass


class UnknownImageError(ConfigError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""
