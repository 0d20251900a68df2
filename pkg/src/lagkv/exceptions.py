"""Exceptions raised by lagkv."""

from __future__ import annotations

__all__ = [
    "LagKVError",
    "ConfigError",
    "ShapeError",
    "EmptyReferenceError",
    "TopKError",
    "EmptySequenceError",
    "EmptyCacheError",
    "StaleRangeError",
    "KvdFormatError",
    "BadMagicError",
    "TruncatedPayloadError",
    "DimensionMismatchError",
]


class LagKVError(Exception):
    """Base class for lagkv errors."""


class ConfigError(LagKVError):
    """Raised when a run configuration is malformed or fails validation."""


class ShapeError(LagKVError, ValueError):
    """Raised when matrix or vector shapes are incompatible."""


class EmptyReferenceError(ShapeError):
    """Raised when column statistics are requested from an empty matrix."""

    def __init__(self, message: str = "empty reference") -> None:
        super().__init__(message)


class TopKError(LagKVError, ValueError):
    """Raised when more indices are requested than there are candidates."""

    def __init__(self, k: int, n: int) -> None:
        super().__init__(f"k exceeds candidates (k={k}, candidates={n})")
        self.k = k
        self.n = n


class EmptySequenceError(LagKVError, ValueError):
    """Raised when a ratio is requested for a zero-length sequence."""

    def __init__(self) -> None:
        super().__init__("empty sequence")


class EmptyCacheError(LagKVError, ValueError):
    """Raised when attention is evaluated over a cache with no rows."""


class StaleRangeError(LagKVError):
    """Raised when a position range is no longer resident in a head cache.

    A range is resident only when every original position in it is still
    present, contiguously, in the head's position list.
    """

    def __init__(self, start: int, stop: int) -> None:
        super().__init__(f"stale range [{start}, {stop})")
        self.start = start
        self.stop = stop


class KvdFormatError(LagKVError):
    """Raised when a KVD file cannot be decoded."""


class BadMagicError(KvdFormatError):
    """Raised when a KVD file does not start with the ``KVD1`` magic."""

    def __init__(self, magic: bytes) -> None:
        super().__init__(f"bad magic {magic!r}")
        self.magic = magic


class TruncatedPayloadError(KvdFormatError):
    """Raised when a KVD file ends before its declared payload."""

    def __init__(self, expected: int, available: int) -> None:
        super().__init__(
            f"truncated payload (needed {expected} bytes, {available} left)"
        )
        self.expected = expected
        self.available = available


class DimensionMismatchError(KvdFormatError):
    """Raised when layers disagree on head count or head dimension, or when
    a KVD header declares dimensions its payload does not match.
    """
