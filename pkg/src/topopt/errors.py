"""Exception types shared across the package."""


class TopoptError(Exception):
    """Base class for all package-specific errors."""


class InvalidSpecError(TopoptError, ValueError):
    """A mesh or geometry specification is malformed."""


class ConfigurationError(TopoptError, ValueError):
    """A run configuration references missing data or invalid values."""


class InvalidCoefficientError(TopoptError, ValueError):
    """A PDE coefficient violates its admissible range."""


class SolverError(TopoptError, RuntimeError):
    """An iterative solve failed to converge.

    Carries the relative residual reached so callers can report
    diagnostics or retry with a looser tolerance.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual
