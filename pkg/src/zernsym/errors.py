"""Exception hierarchy shared by the library and the command line."""


class ZernsymError(Exception):
    """Base class for all package errors."""


class DataError(ZernsymError, ValueError):
    """Input data is malformed, out of range or inconsistent."""


class NumericalError(ZernsymError, ArithmeticError):
    """A computation cannot produce a meaningful result."""


class DegenerateContrastError(NumericalError):
    pass


class NoAngularInformationError(NumericalError):
    pass


class FlatContrastError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    """An iterative fit stopped before meeting its tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
