"""Exception hierarchy shared by every nvsim module."""


class NvSimError(Exception):
    """Base class for all errors raised by nvsim."""


class ConfigError(NvSimError):
    """Invalid or unreadable experiment configuration."""


class NumericalError(NvSimError):
    """A numerical routine could not produce a trustworthy result."""


class NotHermitian(NumericalError):
    pass


class AmbiguousLabeling(NumericalError):
    """Best and second-best bare-state assignments are (nearly) tied."""


class DimensionMismatch(NumericalError):
    pass


class NonUniqueSteadyState(NumericalError):
    pass


class DegenerateDenominator(NumericalError):
    pass


class EmptyTable(NumericalError):
    pass


class IntegratorFailure(NumericalError):
    pass


class InvalidInitialState(NumericalError):
    pass


class NoSolution(NumericalError):
    pass


class IllConditioned(NumericalError):
    """Field inversion converged but the Jacobian is (nearly) singular.

    The best estimate is kept on the exception so callers can still use it.
    """

    def __init__(self, message, B=None, theta=None):
        super().__init__(message)
        self.B = B
        self.theta = theta


class EmptyLocus(NumericalError):
    pass


class NonPositiveWidth(NumericalError):
    pass


class FitFailure(NvSimError):
    """A fit did not converge or its residual is unacceptable.

    ``result`` holds the best-effort FitResult when one exists.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class IndexOutOfRange(NumericalError, IndexError):
    pass
