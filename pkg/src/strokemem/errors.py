"""Exception hierarchy shared by all modules."""


class StrokeMemError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(StrokeMemError, ValueError):
    """A parameter is outside its admissible domain."""


class OutOfRegimeError(StrokeMemError, ValueError):
    """A bound was requested outside the regime in which it is valid."""


class EmptyWindowError(StrokeMemError, ValueError):
    """No concept has a size inside the requested window."""


class ContractError(StrokeMemError, ValueError):
    """A documented precondition of an operation does not hold."""


class NumericalError(StrokeMemError, ArithmeticError):
    """A numerical routine failed (non-finite values, no bracket, ...)."""


class DivergenceError(NumericalError):
    """Gradient descent produced a non-finite energy."""

    def __init__(self, step, value):
        super().__init__(f"non-finite energy {value!r} at step {step}")
        self.step = step
        self.value = value
