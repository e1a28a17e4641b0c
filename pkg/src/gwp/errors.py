"""Exception hierarchy shared across the package."""


class GWPError(Exception):
    """Base class for all package errors."""


class FactorisationFailure(GWPError):
    """A Cholesky factorisation failed, even after adding jitter."""


class NotPositiveDefinite(GWPError):
    """A matrix that must be strictly positive definite is not."""


class SamplerStall(GWPError):
    """A slice-sampling bracket failed to shrink onto an acceptable point."""


class ConvergenceFailure(GWPError):
    """An optimiser could not improve on its baseline."""


class InsufficientData(GWPError):
    """Too few observations for the requested operation."""


class ParseError(GWPError):
    """Malformed input file.  ``line`` is the 1-based offending line."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeError(GWPError, ValueError):
    """Arrays or paths with incompatible shapes or misaligned inputs."""
