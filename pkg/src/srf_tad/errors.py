"""Exception types shared across the package."""


class SrfTadError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SrfTadError, ValueError):
    """An operand's shape disagrees with an operation's contract.

    Carries the operation name, the offending axis, and the expected vs.
    actual extent so callers can report the mismatch precisely.
    """

    def __init__(self, op: str, axis: str, expected, got):
        self.op = op
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"{op}: axis {axis!r} expected {expected}, got {got}")


class NonFiniteError(SrfTadError, ArithmeticError):
    """A kernel or loss produced NaN/Inf from finite inputs."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite values in {op}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class AnnotationError(SrfTadError, ValueError):
    """Annotation file is malformed or violates instance invariants."""


class FeatureFileError(SrfTadError, ValueError):
    """Feature file has a bad magic/version/shape or is truncated."""


class CheckpointError(SrfTadError, ValueError):
    """Checkpoint file is malformed or fails its content hash."""


class PackingError(SrfTadError, RuntimeError):
    """Synthetic instance placement could not satisfy the non-overlap
    constraint within the rejection-sampling budget."""


class TrainingDivergedError(SrfTadError, ArithmeticError):
    """Training loss became non-finite; message carries a diagnostic dump."""
