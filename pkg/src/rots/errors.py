"""Exception hierarchy shared across the package."""


class RotsError(Exception):
    """Base class for all package errors."""


class ParseError(RotsError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ShapeError(RotsError):
    pass


class EmptyDatasetError(RotsError):
    pass


class AlignmentError(RotsError):
    pass


class InfeasibleBandError(RotsError):
    pass


class SizeError(RotsError):
    """Input exceeds an enumeration guard."""


class NumericError(RotsError):
    pass


class UnsupportedError(RotsError):
    pass


class ArchError(RotsError):
    pass


class StateError(RotsError):
    pass


class ConfigError(RotsError):
    def __init__(self, message, field=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class DivergenceError(RotsError):
    """Raised when an iterate becomes non-finite; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
