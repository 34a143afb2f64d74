"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`OrthobootError`; the CLI maps each subclass to an exit code.
"""


class OrthobootError(Exception):
    exit_code = 1


class InvalidArgumentError(OrthobootError, ValueError):
    exit_code = 2


class DegenerateError(OrthobootError, ArithmeticError):
    """A weighted estimating equation has (numerically) zero slope."""

    exit_code = 3


class ConvergenceError(OrthobootError, ArithmeticError):
    exit_code = 3


class PositivityError(OrthobootError, ArithmeticError):
    """A propensity (or a perturbed propensity) left the open unit interval."""

    exit_code = 3


class ExperimentError(OrthobootError):
    """A replicate aborted; ``replicate`` holds its index."""

    exit_code = 3

    def __init__(self, message, replicate=None):
        super().__init__(message)
        self.replicate = replicate


class ReportIOError(OrthobootError, OSError):
    exit_code = 4

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
