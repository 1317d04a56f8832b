"""Exception types raised across the package."""


class ShardingError(Exception):
    """Base class for all package errors."""


class ValidationError(ShardingError, ValueError):
    """Input violates a documented precondition."""


class NumericalError(ShardingError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy result."""


class RankZeroError(NumericalError):
    """No singular value survived truncation."""


class ConvergenceError(NumericalError):
    """An iterative routine did not converge.

    Attributes:
        residual: the last observed residual (max absolute error).
        iterations: number of iterations performed.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
