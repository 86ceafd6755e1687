"""Exception hierarchy shared across the package."""


class URBPError(Exception):
    """Base class for all package errors."""


class ValidationError(URBPError, ValueError):
    """Malformed input (instance, config, arguments)."""


class RowSumError(ValidationError):
    pass


class NegativeEntryError(ValidationError):
    pass


class ErgodicityError(ValidationError):
    pass


class DomainError(ValidationError):
    """Argument outside the domain of an operation (bad label, bad shape)."""


class ConfigError(ValidationError):
    pass


class ConvergenceError(URBPError, RuntimeError):
    def __init__(self, message, last_span=None):
        super().__init__(message)
        self.last_span = last_span


class NumericalError(URBPError, ArithmeticError):
    pass


class ImpossibleObservationError(URBPError, ValueError):
    pass


class GridTooLargeError(URBPError, RuntimeError):
    pass


class OracleTooLargeError(URBPError, RuntimeError):
    pass


class FitError(URBPError, ValueError):
    pass


class NoDataError(URBPError, ValueError):
    pass
