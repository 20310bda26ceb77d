"""Exception types raised across the package."""


class SnnloopError(Exception):
    """Base class for all package errors."""


class ValidationError(SnnloopError, ValueError):
    """An input or configuration violates a documented bound or invariant."""


class PolicyFileError(SnnloopError, ValueError):
    """A weight file could not be parsed."""


class TrainingDivergedError(SnnloopError, ArithmeticError):
    """Behavior-cloning loss became non-finite."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss


class NumericFault(SnnloopError, ArithmeticError):
    """A membrane potential or environment quantity became non-finite."""


class ProtocolError(SnnloopError, RuntimeError):
    """Decision-step bookkeeping was called out of order."""


class SolverError(SnnloopError, RuntimeError):
    """An iterative solver failed to converge."""


class EmptyReportError(SnnloopError, ValueError):
    """No valid samples were accumulated for a statistic."""


class DegenerateDataError(SnnloopError, ValueError):
    """Input data has no variance to analyze."""
