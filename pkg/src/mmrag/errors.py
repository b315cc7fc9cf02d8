"""Exception hierarchy shared across the package."""

from __future__ import annotations


class MMRagError(Exception):
    """Base class for all errors raised by mmrag."""


class ConfigError(MMRagError):
    """Invalid configuration, detected before any network use."""


class SchemaError(MMRagError):
    """A corpus or test-set line does not match the expected schema."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class BackendError(MMRagError):
    """A model backend failed or returned an unusable response."""


class TransportError(BackendError):
    """Network-level failure or retryable HTTP status."""


class ImageLimitError(BackendError):
    """More images in a prompt than the backend accepts."""


class VectorStoreError(MMRagError):
    """Index or document-store contract violation."""


class DimensionMismatch(VectorStoreError, ValueError):
    pass


class IndexFormatError(VectorStoreError):
    """On-disk index file is truncated, corrupted, or of another version."""


class JudgeParseError(MMRagError):
    """Judge output could not be parsed into a grade and reason."""


class EmptyCompletion(BackendError):
    """The model returned no text."""
