# src/impact_numba/errors.py

"""Exception hierarchy shared by every module and the CLI exit codes it maps to."""


class ImpactNumbaError(Exception):
    """Base class for all impact-numba errors."""

    exit_code = 1


class ConfigError(ImpactNumbaError, ValueError):
    """Invalid parameters, unknown scenario names or unusable output paths."""

    exit_code = 2


class DomainError(ImpactNumbaError, ValueError):
    """A kernel or exponent function was called outside its domain."""

    exit_code = 3


class UnsortedFlowError(DomainError):
    """An event flow was expected to be sorted by timestamp."""


class NumericalError(ImpactNumbaError, ValueError):
    """A numerical procedure could not produce a meaningful result."""

    exit_code = 3


class FitError(NumericalError):
    """A regression or non-linear fit failed or returned unusable parameters."""


class SignCorrelationError(NumericalError):
    """The requested sign autocorrelation is not a valid covariance sequence."""

    def __init__(self, message: str, lag: int, frequency: int, min_eigenvalue: float):
        super().__init__(message)
        self.lag = lag
        self.frequency = frequency
        self.min_eigenvalue = min_eigenvalue
