"""Exception types shared across the package."""


class MetaencError(Exception):
    """Base class for all package errors."""


class ShapeError(MetaencError, ValueError):
    """Operands have incompatible shapes for an operation."""


class NonFiniteError(MetaencError, FloatingPointError):
    """A computed value contains NaN or Inf, or an iterate diverged."""


class TapeError(MetaencError, ValueError):
    """Misuse of a tape: non-scalar root, foreign variables, unknown leaves."""


class SolveError(MetaencError, ArithmeticError):
    """The conjugate-gradient solve failed."""


class NotPositiveDefiniteError(SolveError):
    """A CG curvature term was non-positive; increase damping."""


class ConvergenceError(SolveError):
    """CG did not reach the residual tolerance within its iteration budget."""


class IdxFormatError(MetaencError, ValueError):
    """Malformed IDX file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(MetaencError, ValueError):
    """Malformed or incompatible checkpoint file."""


class ConfigError(MetaencError, ValueError):
    """Invalid configuration."""


class RankDeficientError(MetaencError, ValueError):
    """The requested subspace is degenerate: an eigenvalue is numerically zero."""
