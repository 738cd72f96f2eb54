"""Exception hierarchy shared across the package."""


class PsgdError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDimensionError(PsgdError, ValueError):
    pass


class InvalidParameterError(PsgdError, ValueError):
    """A configuration value or argument violates its documented range."""


class UnsupportedOperationError(PsgdError):
    pass


class NonFiniteEvaluationError(PsgdError, FloatingPointError):
    """An objective callback returned inf/nan.

    The offending parameter vector is kept on ``point``.
    """

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class SingularityError(PsgdError, ArithmeticError):
    pass


class DivisionHazardError(SingularityError):
    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class RejectedUpdateError(PsgdError):
    """A preconditioner update would leave its group; the state was left untouched."""


class OracleCapError(PsgdError, ValueError):
    pass
