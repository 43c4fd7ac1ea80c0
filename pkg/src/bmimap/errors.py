"""Exception hierarchy shared by all modules."""


class BmiMapError(ValueError):
    """Base class for every error raised by this package."""


class DomainError(BmiMapError):
    """Input outside the mathematical domain of a function."""


class BoundaryError(DomainError):
    """Probability exactly 0 or 1 where an open interval is required."""


class InfeasibleInputError(BmiMapError):
    """Aggregate moments that no distribution of the assumed family can produce."""


class NonConvergenceError(BmiMapError):
    """Iterative solver stopped without meeting its tolerance.

    ``best`` holds the best iterate found and ``diagnostics`` the solver state.
    """

    def __init__(self, message, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


class ChartError(BmiMapError):
    """Invalid or unusable LMS reference chart."""


class ChartParseError(ChartError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AgeRangeError(ChartError):
    """Age query outside the tabulated range of a chart."""


class SamplingError(BmiMapError):
    """Rejection sampling exhausted its retry budget."""


class StepRejectionError(BmiMapError):
    """Smooth update would make the z-score SD non-positive."""


class RecordParseError(BmiMapError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(BmiMapError):
    """Record content fails a semantic check after parsing."""
