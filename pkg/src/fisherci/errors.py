"""Exception and warning types raised across the package."""


class FisherCIError(Exception):
    """Base class for package errors."""


class DomainError(FisherCIError, ValueError):
    """An argument lies outside the domain of the function."""


class NotPositiveDefinite(FisherCIError, ValueError):
    """A matrix that must be positive definite is not."""


class FilterDivergence(NotPositiveDefinite):
    """An innovation covariance lost positive definiteness during filtering."""


class QuadratureNotConverged(FisherCIError, RuntimeError):
    pass


class StepUnderflow(FisherCIError, ValueError):
    """Finite-difference step is indistinguishable from zero."""


class InsufficientReplications(FisherCIError, ValueError):
    pass


class NoIncludedReplications(FisherCIError, ValueError):
    pass


class ParseError(FisherCIError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ValidationError(FisherCIError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class IllConditioned(UserWarning):
    """Reciprocal condition number of an inverted matrix is tiny."""


class NotConverged(UserWarning):
    """A solver hit its iteration cap before reaching the gradient tolerance."""


class ZeroMseF(UserWarning):
    """MSE with the expected FIM is zero while MSE with the observed FIM is not."""
