"""Exception hierarchy.  Each class carries the CLI exit code it maps to."""


class PowerProxyError(Exception):
    exit_code = 1


class ParameterError(PowerProxyError, ValueError):
    """Invalid argument or configuration value."""
    exit_code = 2


class DataError(PowerProxyError, ValueError):
    """Input data is malformed, non-finite or dimensionally inconsistent."""
    exit_code = 3


class FormatError(DataError):
    """A file could not be parsed (bad magic, checksum, truncated, bad VCD)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UndefinedMetricError(DataError):
    """A metric's normaliser is zero (e.g. mean label power of 0)."""


class InvariantViolation(PowerProxyError, AssertionError):
    """An internal guarantee failed; indicates a bug, never bad input."""
    exit_code = 4


class ClockError(ParameterError, FormatError):
    """The named sampling clock is missing or unusable; a bad argument, reported as a parse error."""
