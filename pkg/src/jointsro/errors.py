"""Exception hierarchy shared by the library and the command line."""


class SyncError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SyncError, ValueError):
    """Input data violates a documented precondition."""


class ConfigurationError(SyncError, ValueError):
    """An STFT/estimator configuration cannot be used."""


class NumericalError(SyncError, ArithmeticError):
    """A numerical step failed (singular matrix, non-finite estimate)."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
