"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class NtgenError(Exception):
    """Base class for all toolkit errors."""


class InputError(NtgenError, ValueError):
    """Bad or missing input data (CLI exit code 2)."""


class UnsupportedFormatError(InputError):
    pass


class TruncatedCaptureError(InputError):
    def __init__(self, message: str, packets_read: int, offset: int | None = None):
        super().__init__(message)
        self.packets_read = packets_read
        self.offset = offset


class InvalidTimestampError(InputError):
    pass


class EmptyInputError(InputError):
    pass


class InsufficientDataError(InputError):
    pass


class VocabularyError(InputError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class EmptyModelError(InputError):
    pass


class UndefinedSilhouetteError(InputError):
    pass


class GenerationConfigError(InputError):
    pass


class ConfigError(InputError):
    pass


class RunawaySequenceError(NtgenError, RuntimeError):
    def __init__(self, message: str, seed: int, sequence_index: int):
        super().__init__(message)
        self.seed = seed
        self.sequence_index = sequence_index


class StageMismatchError(NtgenError):
    """Artifacts from incompatible runs were combined (CLI exit code 3)."""

    def __init__(self, message: str, expected: str | None = None, found: str | None = None):
        if expected is not None or found is not None:
            message = f"{message} (expected catalog hash {expected}, found {found})"
        super().__init__(message)
        self.expected = expected
        self.found = found


# An encoder mismatch is a stage mismatch seen from inside the clustering code.
EncoderMismatchError = StageMismatchError


class ConsistencyError(NtgenError, RuntimeError):
    """Internal invariant broken; indicates a pipeline bug."""
