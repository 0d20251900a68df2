"""Tests for the lagkv.cache.kvd module."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

from lagkv.cache.kvd import (
    KVD_MAGIC,
    MAX_HEADS,
    decode_kvd,
    encode_kvd,
    load_kvd,
    save_kvd,
)
from lagkv.cache.model import HeadCache, LayerCache
from lagkv.exceptions import (
    BadMagicError,
    DimensionMismatchError,
    KvdFormatError,
    TruncatedPayloadError,
)
from tests.support.caches import random_caches, random_layer


def test_round_trip(tmp_path: Path) -> None:
    caches = random_caches(5, n_layers=2, h_kv=2, seq_len=8, d_h=4)
    path = tmp_path / "cache.kvd"
    save_kvd(caches, path)
    loaded = load_kvd(path)
    assert len(loaded) == 2
    for original, copy in zip(caches, loaded, strict=True):
        assert copy.layer_index == original.layer_index
        for a, b in zip(original.heads, copy.heads, strict=True):
            np.testing.assert_array_equal(a.keys, b.keys)
            np.testing.assert_array_equal(a.values, b.values)
            np.testing.assert_array_equal(a.positions, b.positions)
    assert encode_kvd(loaded) == path.read_bytes()


@pytest.mark.parametrize("seed", range(20))
def test_round_trip_shapes(seed: int) -> None:
    rng = np.random.default_rng([seed, 20])
    h_kv = int(rng.integers(1, 5))
    d_h = int(rng.integers(1, 17))
    n_layers = int(rng.integers(1, 5))
    caches = [
        random_layer(
            rng,
            layer_index=i,
            h_kv=h_kv,
            seq_len=0 if (i + seed) % 2 == 0 else int(rng.integers(1, 40)),
            d_h=d_h,
        )
        for i in range(n_layers)
    ]
    data = encode_kvd(caches)
    loaded = decode_kvd(data)
    assert [c.seq_len for c in loaded] == [c.seq_len for c in caches]
    assert {(c.h_kv, c.d_h) for c in loaded} == {(h_kv, d_h)}
    for original, copy in zip(caches, loaded, strict=True):
        for a, b in zip(original.heads, copy.heads, strict=True):
            np.testing.assert_array_equal(a.keys, b.keys)
            np.testing.assert_array_equal(a.values, b.values)
            np.testing.assert_array_equal(a.positions, b.positions)
    assert encode_kvd(loaded) == data


def test_empty_layers_round_trip() -> None:
    empty = LayerCache(
        layer_index=0, heads=[HeadCache.empty(3), HeadCache.empty(3)]
    )
    full = random_layer(
        np.random.default_rng(8), layer_index=1, h_kv=2, seq_len=5, d_h=3
    )
    data = encode_kvd([empty, full])
    loaded = decode_kvd(data)
    assert [c.seq_len for c in loaded] == [0, 5]
    assert loaded[0].d_h == 3
    assert encode_kvd(loaded) == data


def test_layout() -> None:
    head = HeadCache(
        keys=[[1.0, 2.0]], values=[[3.0, 4.0]], positions=[7]
    )
    data = encode_kvd([LayerCache(layer_index=0, heads=[head])])
    assert data[:4] == b"KVD1"
    assert struct.unpack("<IIII", data[4:20]) == (1, 1, 1, 2)
    assert struct.unpack("<I", data[20:24]) == (1,)
    assert struct.unpack("<I", data[24:28]) == (7,)
    assert struct.unpack("<4f", data[28:44]) == (1.0, 2.0, 3.0, 4.0)
    assert len(data) == 44


def test_empty_cache_list() -> None:
    assert decode_kvd(encode_kvd([])) == []


def test_bad_magic() -> None:
    data = b"XXXX" + encode_kvd(random_caches(0))[4:]
    with pytest.raises(BadMagicError, match="bad magic"):
        decode_kvd(data)


def test_truncated_payload() -> None:
    caches = random_caches(1, n_layers=1, h_kv=1, seq_len=50, d_h=4)
    data = bytearray(encode_kvd(caches))
    data[20:24] = struct.pack("<I", 100)
    with pytest.raises(TruncatedPayloadError, match="truncated payload"):
        decode_kvd(bytes(data))


def test_unsupported_version() -> None:
    data = bytearray(encode_kvd(random_caches(2)))
    data[4:8] = struct.pack("<I", 2)
    with pytest.raises(KvdFormatError, match="version"):
        decode_kvd(bytes(data))


def test_trailing_bytes() -> None:
    data = encode_kvd(random_caches(3)) + b"\0\0\0\0"
    with pytest.raises(DimensionMismatchError):
        decode_kvd(data)


def test_positions_must_increase() -> None:
    caches = random_caches(4, n_layers=1, h_kv=1, seq_len=4, d_h=2)
    data = bytearray(encode_kvd(caches))
    data[24:28] = struct.pack("<I", 3)
    with pytest.raises(KvdFormatError):
        decode_kvd(bytes(data))


def test_layers_must_agree() -> None:
    caches = random_caches(6, n_layers=1, h_kv=2, d_h=4)
    caches += random_caches(7, n_layers=1, h_kv=2, d_h=3)
    with pytest.raises(DimensionMismatchError):
        encode_kvd(caches)


def test_magic_constant() -> None:
    assert KVD_MAGIC == b"KVD1"


def test_header_declaring_too_many_heads() -> None:
    header = struct.pack("<4sIIII", KVD_MAGIC, 1, 1, 2_000_000, 4)
    with pytest.raises(DimensionMismatchError, match="head caches"):
        decode_kvd(header + struct.pack("<I", 0))
    limit = struct.pack("<4sIIII", KVD_MAGIC, 1, 1, MAX_HEADS, 4)
    assert len(decode_kvd(limit + struct.pack("<I", 0))[0].heads) == (
        MAX_HEADS
    )


def test_header_declaring_too_many_layers() -> None:
    header = struct.pack("<4sIIII", KVD_MAGIC, 1, 4_000_000_000, 1, 4)
    with pytest.raises(TruncatedPayloadError):
        decode_kvd(header + struct.pack("<I", 0))
