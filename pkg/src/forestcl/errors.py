"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`ForestCLError`. The CLI maps the three branches below onto exit
codes 2, 3 and 4.
"""


class ForestCLError(Exception):
    """Base class for package errors."""


class ConfigError(ForestCLError, ValueError):
    """Invalid configuration or inconsistent inputs (exit code 2)."""


class DataError(ForestCLError, ValueError):
    """Malformed or out-of-range data (exit code 3)."""


class DomainError(DataError):
    """A location or value outside the domain of a lookup."""


class NumericalError(ForestCLError, ArithmeticError):
    """Numerical failure: overflow, singular matrices, non-convergence (exit code 4)."""


class RankDeficiencyError(NumericalError):
    def __init__(self, message, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class ConvergenceError(NumericalError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class EmbeddingWarning(UserWarning):
    """Circulant embedding needed clipping of negative eigenvalues."""


class SeparationWarning(UserWarning):
    """A logistic fit drove one response class to saturation."""
