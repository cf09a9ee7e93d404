"""Exception types shared across the package."""


class NeurofitError(Exception):
    """Base class for all package errors."""


class NumericFailure(NeurofitError, ArithmeticError):
    """A non-finite value appeared in a computation.

    ``where`` names the operation, trainable, or step that produced it.
    """

    def __init__(self, message, where=None, step=None):
        super().__init__(message)
        self.where = where
        self.step = step


class SingularParameterError(NeurofitError, ValueError):
    """A model parameter makes the equations singular (tau = 0, Cm = 0)."""


class DegenerateWindowError(NeurofitError, ValueError):
    """A series has zero range and cannot be rescaled."""


class DataFormatError(NeurofitError, ValueError):
    """Malformed input file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
