"""Exception hierarchy."""


class PredMatchError(Exception):
    """Base class for all toolkit errors."""


class DomainError(PredMatchError, ValueError):
    """Parameter value outside the family's parameter domain."""


class BracketError(PredMatchError, ValueError):
    """A root-finding bracket does not straddle a sign change."""


class QuadratureError(PredMatchError, ArithmeticError):
    """Non-finite integrand value or failed quadrature."""


class SingularMatrixError(PredMatchError, ArithmeticError):
    """Matrix is singular or too badly conditioned to invert."""


class NonRegularModel(PredMatchError, ArithmeticError):
    """Fisher information is numerically singular or indefinite."""


class LinearlyDependentXi(PredMatchError, ArithmeticError):
    """The HPD region integrals xi_t are linearly dependent in alpha.

    In that case there is either no uniformly matching prior or infinitely
    many, so no unique gradient can be returned.
    """

    def __init__(self, message, ratio=None):
        super().__init__(message)
        self.ratio = ratio


class NotAGradientField(PredMatchError, ArithmeticError):
    """Line integrals of a vector field depend on the path."""


class GridMisplaced(PredMatchError, ArithmeticError):
    """All posterior grid weights underflowed."""


class ConfigError(PredMatchError, ValueError):
    """Invalid experiment configuration."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column
