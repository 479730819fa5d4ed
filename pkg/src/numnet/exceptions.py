class NumNetError(Exception):
    """Base class for errors raised by this package."""


class DropFormatError(NumNetError, ValueError):
    """Input is not valid JSON."""


class SchemaError(NumNetError, ValueError):
    """Input JSON does not follow the DROP layout."""


class DimensionError(NumNetError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(NumNetError, ValueError):
    """A documented precondition was violated."""


class OptimizerError(NumNetError, FloatingPointError):
    """Non-finite values reached the optimizer."""


class StateError(NumNetError, RuntimeError):
    """Operation is invalid in the current object state."""


class CheckpointError(NumNetError, ValueError):
    """Checkpoint is unreadable or incompatible with the requested model."""
