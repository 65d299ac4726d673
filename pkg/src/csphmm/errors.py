"""Exception types shared across the package."""


class CsphmmError(Exception):
    """Base class for library errors."""


class InvalidInputError(CsphmmError, ValueError):
    """An argument violates a documented precondition."""


class NoValidPathError(CsphmmError, RuntimeError):
    """Every state path through the model has zero probability."""


class NumericFailureError(CsphmmError, RuntimeError):
    """Training produced a non-finite likelihood."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class UnknownSpeakerError(CsphmmError, KeyError):
    """A trial references a speaker id that is not enrolled."""


class ManifestError(CsphmmError, ValueError):
    """A manifest file is malformed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class TrainingDataEmptyError(CsphmmError, RuntimeError):
    """No usable training material remained after filtering."""
