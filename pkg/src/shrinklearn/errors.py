"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad user input: shapes, ranges, flag combinations."""


class NumericalError(ArithmeticError):
    """A computation could not produce a meaningful number."""


class DivergenceError(NumericalError):
    """A non-finite value appeared during an iterative computation.

    ``iteration`` is the 1-based index at which it was detected and
    ``snapshot`` optionally carries the last finite state.
    """

    def __init__(self, message, iteration=None, snapshot=None):
        super().__init__(message)
        self.iteration = iteration
        self.snapshot = snapshot
