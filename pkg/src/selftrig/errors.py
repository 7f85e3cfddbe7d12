"""Exception types shared across the package."""


class SelfTrigError(Exception):
    """Base class for all errors raised by selftrig."""


class UsageError(SelfTrigError, ValueError):
    """Arguments with wrong shape, type, or a violated precondition."""


class DomainError(SelfTrigError, ValueError):
    """A point lies outside the region where an object is defined."""


class NumericError(SelfTrigError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class NoSolutionError(SelfTrigError, ValueError):
    """The problem, as posed, has no admissible solution."""


class ConfigError(SelfTrigError, ValueError):
    """Invalid scenario configuration."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
