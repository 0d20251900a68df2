"""Reader and writer for KVD files, a little-endian binary dump of
per-layer, per-head KV caches.

Layout::

    magic "KVD1" | version u32 | n_layers u32 | h_kv u32 | d_h u32
    per layer:  seq_len u32
      per head: positions (seq_len × u32)
                K (seq_len × d_h × f32, row-major)
                V (seq_len × d_h × f32, row-major)

Payloads are stored as binary32; in memory they are widened to binary64,
so a load/save cycle reproduces the file byte for byte.
"""

from __future__ import annotations

import logging
import struct
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from ..exceptions import (
    BadMagicError,
    DimensionMismatchError,
    KvdFormatError,
    TruncatedPayloadError,
)
from .model import HeadCache, LayerCache

__all__ = [
    "KVD_MAGIC",
    "KVD_VERSION",
    "MAX_HEADS",
    "save_kvd",
    "load_kvd",
    "encode_kvd",
    "decode_kvd",
]

KVD_MAGIC = b"KVD1"
"""Leading bytes of every KVD file."""

KVD_VERSION = 1
"""The format version written by `save_kvd`."""

HEADER_STRUCT = struct.Struct("<4sIIII")
"""magic, version, n_layers, h_kv, d_h."""

SEQ_LEN_STRUCT = struct.Struct("<I")

MAX_HEADS = 1 << 16
"""Most head caches (layers times KV heads) a KVD file may declare."""

_F32 = np.dtype("<f4")
_U32 = np.dtype("<u4")

logger = logging.getLogger(__name__)


def encode_kvd(caches: Sequence[LayerCache]) -> bytes:
    """Encode layer caches in the KVD format.

    Raises
    ------
    DimensionMismatchError
        Raised if the layers disagree on the number of KV heads or on the
        head dimension.
    """
    shapes = {(c.h_kv, c.d_h) for c in caches}
    if len(shapes) > 1:
        raise DimensionMismatchError(
            f"Layers disagree on (h_kv, d_h): {sorted(shapes)}"
        )
    h_kv, d_h = shapes.pop() if shapes else (0, 0)
    header = HEADER_STRUCT.pack(
        KVD_MAGIC, KVD_VERSION, len(caches), h_kv, d_h
    )
    chunks = [header]
    for layer in caches:
        lengths = {h.seq_len for h in layer.heads}
        if len(lengths) > 1:
            raise DimensionMismatchError(
                f"Heads of layer {layer.layer_index} have different lengths"
            )
        chunks.append(SEQ_LEN_STRUCT.pack(layer.seq_len))
        for head in layer.heads:
            chunks.append(head.positions.astype(_U32).tobytes())
            chunks.append(head.keys.astype(_F32).tobytes())
            chunks.append(head.values.astype(_F32).tobytes())
    return b"".join(chunks)


def save_kvd(caches: Sequence[LayerCache], path: Path) -> None:
    """Write layer caches to a KVD file."""
    data = encode_kvd(caches)
    Path(path).write_bytes(data)
    logger.debug(f"Wrote {len(caches)} layers ({len(data)} bytes) to {path}")


def load_kvd(path: Path) -> list[LayerCache]:
    """Read layer caches from a KVD file.

    Raises
    ------
    BadMagicError
        Raised if the file does not start with ``KVD1``.
    TruncatedPayloadError
        Raised if the file ends before the payload its header declares.
    DimensionMismatchError
        Raised if the header dimensions are inconsistent with the payload
        or declare more than `MAX_HEADS` head caches.
    KvdFormatError
        Raised for an unsupported version or invalid position lists.
    """
    data = Path(path).read_bytes()
    caches = decode_kvd(data)
    logger.debug(f"Read {len(caches)} layers from {path}")
    return caches


def decode_kvd(data: bytes) -> list[LayerCache]:
    """Decode the content of a KVD file; see `load_kvd`."""
    reader = _Reader(data)
    magic = reader.take(4)
    if magic != KVD_MAGIC:
        raise BadMagicError(magic)
    version, n_layers, h_kv, d_h = struct.unpack(
        "<IIII", reader.take(HEADER_STRUCT.size - 4)
    )
    if version != KVD_VERSION:
        raise KvdFormatError(f"unsupported KVD version {version}")
    if n_layers and h_kv and d_h == 0:
        raise DimensionMismatchError("Header declares heads with d_h = 0")
    # Empty layers carry no payload to bound the declared structure
    if n_layers * SEQ_LEN_STRUCT.size > reader.remaining:
        raise TruncatedPayloadError(
            n_layers * SEQ_LEN_STRUCT.size, reader.remaining
        )
    if n_layers * h_kv > MAX_HEADS:
        raise DimensionMismatchError(
            f"Header declares {n_layers} layers of {h_kv} heads, more than "
            f"{MAX_HEADS} head caches"
        )

    caches: list[LayerCache] = []
    for layer_index in range(n_layers):
        (seq_len,) = SEQ_LEN_STRUCT.unpack(reader.take(SEQ_LEN_STRUCT.size))
        heads: list[HeadCache] = []
        for _ in range(h_kv):
            positions = reader.array(_U32, seq_len).astype(np.int64)
            keys = reader.array(_F32, seq_len * d_h).reshape(seq_len, d_h)
            values = reader.array(_F32, seq_len * d_h).reshape(seq_len, d_h)
            if np.any(np.diff(positions) <= 0):
                raise KvdFormatError(
                    f"Positions of layer {layer_index} are not increasing"
                )
            heads.append(
                HeadCache(
                    keys=keys.astype(np.float64),
                    values=values.astype(np.float64),
                    positions=positions,
                )
            )
        caches.append(LayerCache(layer_index=layer_index, heads=heads))

    if reader.remaining:
        raise DimensionMismatchError(
            f"{reader.remaining} bytes beyond the payload declared by the "
            "header"
        )
    return caches


class _Reader:
    """Sequential reader over a byte buffer that reports truncation."""

    def __init__(self, data: bytes) -> None:
        self._data = memoryview(data)
        self._offset = 0

    @property
    def remaining(self) -> int:
        return len(self._data) - self._offset

    def take(self, n: int) -> bytes:
        if n > self.remaining:
            raise TruncatedPayloadError(n, self.remaining)
        chunk = self._data[self._offset : self._offset + n]
        self._offset += n
        return bytes(chunk)

    def array(self, dtype: np.dtype, count: int) -> np.ndarray:
        raw = self.take(dtype.itemsize * count)
        return np.frombuffer(raw, dtype=dtype, count=count)
