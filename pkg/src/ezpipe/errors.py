"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class EZError(Exception):
    """Base class for every domain failure raised by ezpipe."""


class DuplicateKey(EZError, ValueError):
    def __init__(self, key: str, line: int | None = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"duplicate key {key!r}{where}")


class MalformedLine(EZError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class MissingManifest(EZError, FileNotFoundError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing manifest file: {name}")


class ValidationFailure(EZError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"{v.kind}:{v.id}" for v in self.violations)
        super().__init__(f"{len(self.violations)} violation(s): {lines}")


class IoError(EZError, OSError):
    pass


class SchemaError(EZError, ValueError):
    pass


class ConfigError(SchemaError):
    pass


class ExtractionError(EZError, RuntimeError):
    def __init__(self, field: str, id: str, cause: BaseException):
        self.field = field
        self.id = id
        self.cause = cause
        super().__init__(f"extractor {field!r} failed on item {id!r}: {cause!r}")


class UnsupportedShape(EZError, ValueError):
    pass


class EmptyStats(EZError, ValueError):
    pass


class EmptyDataset(EZError, ValueError):
    pass


class NonFiniteGradient(EZError, FloatingPointError):
    def __init__(self, step: int | None = None, names=()):
        self.step = step
        self.names = tuple(names)
        super().__init__(f"non-finite gradient at step {step} in {list(self.names)}")


class CorruptCheckpoint(EZError, ValueError):
    pass


class IncompatibleCheckpoint(EZError, ValueError):
    pass


class NoTargetsMatched(EZError, ValueError):
    pass


class NotAdapted(EZError, TypeError):
    pass


class BadFactor(EZError, ValueError):
    pass


class LabelError(EZError, KeyError):
    pass


class UnknownModel(EZError, KeyError):
    pass


class MalformedRegistry(EZError, ValueError):
    pass


class ChecksumMismatch(EZError, ValueError):
    pass


class DownloadError(EZError, OSError):
    pass
