"""Exception hierarchy shared by all modules."""


class PHMMError(Exception):
    """Base class for library errors."""


class ModelError(PHMMError):
    """The state process does not have the requested property."""


class DivergenceError(ModelError):
    """A state is absorbing over a full cycle, so dwell times are infinite."""


class DataError(PHMMError, ValueError):
    """Observations are malformed or degenerate."""


class NumericError(PHMMError, ArithmeticError):
    """A recursion produced a non-finite or zero normaliser."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class UncertaintyError(PHMMError):
    """The normal approximation to the estimator is unavailable."""


class CheckError(PHMMError):
    """The dwell-time model check cannot be computed."""
