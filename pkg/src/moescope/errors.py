"""Exception types shared across moescope."""


class MoeScopeError(Exception):
    """Base class for all package errors."""


class DimensionError(MoeScopeError, ValueError):
    """Operand shapes disagree."""


class ContractError(MoeScopeError, ValueError):
    """An operation was called outside its preconditions."""


class UninitializedStatisticsError(MoeScopeError, RuntimeError):
    """Batch-norm running statistics used before any train-mode pass."""


class EmptySupportError(MoeScopeError, ValueError):
    """A masked softmax row has no finite entry."""


class DegenerateInputError(MoeScopeError, ValueError):
    """Input has no variation where variation is required."""


class ConvergenceError(MoeScopeError, RuntimeError):
    """An iterative solver exhausted its budget."""


class NonFiniteLossError(MoeScopeError, FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, message, snapshot_path=None):
        super().__init__(message)
        self.snapshot_path = snapshot_path


class FormatError(MoeScopeError, ValueError):
    """A serialized file is malformed, truncated or of the wrong kind."""


class ConfigError(MoeScopeError, ValueError):
    """Invalid user-supplied configuration."""
