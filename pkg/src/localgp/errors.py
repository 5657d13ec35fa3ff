"""Exception types shared across the package."""


class LocalGPError(Exception):
    """Base class for all errors raised by localgp."""


class InvalidInputError(LocalGPError, ValueError):
    """Non-finite coordinates, mismatched dimensions, bad parameters."""


class ConditioningError(LocalGPError, ArithmeticError):
    """A matrix that should be positive definite is not (numerically).

    ``pivot`` holds the failing pivot index when it is known.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class NumericalError(LocalGPError, ArithmeticError):
    """A quantity left its valid range, e.g. a non-positive psi."""


class DesignStallError(LocalGPError):
    """Every remaining candidate was infeasible during greedy selection.

    ``trace`` holds the row ids chosen before the stall.
    """

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class EmulationFailure(NumericalError):
    """Too many prediction locations failed during global emulation.

    ``result`` holds the partial result with sentinel rows.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
