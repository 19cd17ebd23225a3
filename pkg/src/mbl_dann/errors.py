"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class MblDannError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(MblDannError, ValueError):
    pass


class CapacityError(MblDannError):
    """A problem size exceeds the configured cap."""


class DegenerateSpectrumError(MblDannError, ValueError):
    pass


class InsufficientLevelsError(MblDannError, ValueError):
    pass


class DegenerateBatchError(MblDannError, ValueError):
    pass


class DivergenceError(MblDannError, ArithmeticError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class NoOverlapError(MblDannError, ValueError):
    pass


class NotCrossedError(MblDannError, ValueError):
    pass


class FormatError(MblDannError):
    """Base class for on-disk format problems."""


class CorruptHeaderError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class CountMismatchError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class ConfigError(MblDannError):
    pass


class MissingArtifactError(MblDannError, FileNotFoundError):
    def __init__(self, artifact, command: str):
        super().__init__(f"missing artifact {artifact}; run `mbl-dann {command}` first")
        self.artifact = artifact
        self.command = command
