"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor/array dimensions do not satisfy an operation's contract."""


class ValidationError(ValueError):
    """Input values violate a documented precondition (range, binarity, ...)."""


class StateError(RuntimeError):
    """Operation invoked on an object in an unusable state (e.g. empty memory)."""


class EvaluationError(RuntimeError):
    """A function under test produced a non-finite or non-scalar output."""


class GenerationError(RuntimeError):
    """Synthetic sequence generation failed (e.g. lesion leaves the frame)."""


class TrainingDivergedError(RuntimeError):
    """Training aborted on a non-finite loss."""
