"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (a ``ValueError``);
file problems derive from :class:`IoError` (an ``OSError``).  The CLI maps
the two families to exit codes 1 and 2.
"""


class CryoRefineError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(CryoRefineError, ValueError):
    pass


class IoError(CryoRefineError, OSError):
    pass


class NonHermitianInput(ValidationError):
    pass


class NonHermitianAccumulator(ValidationError):
    pass


class BlobOutOfGrid(ValidationError):
    pass


class OutsideWindow(ValidationError):
    pass


class OddParticleCount(ValidationError):
    pass


class StepDiverged(CryoRefineError, ArithmeticError):
    pass


class EmptyMask(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class NonPositiveScale(ValidationError):
    pass


class BadMagic(IoError):
    pass


class UnsupportedMode(IoError):
    pass


class TruncatedFile(IoError):
    pass


class ParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DidNotConverge(UserWarning):
    """Warning category: refinement hit ``max_iters`` before converging."""


class ParameterRangeWarning(UserWarning):
    """Regularization multiplier outside the empirically useful range."""
