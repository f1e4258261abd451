"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes or lengths do not agree."""


class NotSPDError(ValueError):
    """A factorization met a non-positive pivot."""


class EmptySystemError(ValueError):
    """The reduced system has no unknowns (no fluid cells)."""


class BreakdownError(RuntimeError):
    """An iterative method produced a zero or negative curvature direction."""

    def __init__(self, message, iteration=None, value=None, report=None):
        super().__init__(message)
        self.iteration = iteration
        self.value = value
        self.report = report


class ConvergenceError(RuntimeError):
    """An inner solve did not reach its tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class TrainingDivergedError(RuntimeError):
    """Training loss blew up past the abort threshold."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


class FormatError(ValueError):
    """A binary or text file does not follow its declared layout."""
