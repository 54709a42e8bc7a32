"""Exception types shared across the package."""


class QlstmError(Exception):
    """Base class for all package errors."""


class ConfigError(QlstmError, ValueError):
    """A configuration value is out of its allowed range."""


class UsageError(QlstmError, ValueError):
    """An operation was called with inconsistent arguments (shapes, indices)."""


class ParseError(QlstmError, ValueError):
    """Malformed text input. Carries the offending position when known."""

    def __init__(self, message: str, position: int | None = None, line: int | None = None):
        self.position = position
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if position is not None:
            where.append(f"position {position}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NumericalError(QlstmError, FloatingPointError):
    """A non-finite value showed up where training cannot continue."""
