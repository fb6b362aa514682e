"""Exception hierarchy shared by the solver library and the CLI."""


class MalmError(Exception):
    """Base class for all library errors."""


class DimensionError(MalmError, ValueError):
    """Array shapes do not agree."""


class NumericError(MalmError, ValueError):
    """Non-finite input or a numerically singular system."""


class DegenerateMatrixError(NumericError):
    """Every eigenvalue fell below the zero threshold."""


class IllPosedConstraintError(MalmError, ValueError):
    """Constraint dimensions leave no room for optimization (m >= d)."""


class ParameterError(MalmError, ValueError):
    """Invalid solver parameter or schedule constant."""


class PreconditionError(MalmError, ValueError):
    """A verification check was invoked outside its domain of validity."""


class DivergenceError(MalmError, ArithmeticError):
    """Iterates blew up. Carries the iteration index and any partial trace."""

    def __init__(self, r, message=None, trace=None):
        self.r = r
        self.trace = trace
        super().__init__(message or f"iterates diverged at r={r}")


class FormatError(MalmError, ValueError):
    """A problem file, trace CSV or config could not be parsed."""
