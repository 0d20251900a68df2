"""Builders of random KV caches for tests."""

from __future__ import annotations

import numpy as np

from lagkv.cache.model import HeadCache, LayerCache


def random_layer(
    rng: np.random.Generator,
    *,
    layer_index: int = 0,
    h_kv: int = 2,
    seq_len: int = 64,
    d_h: int = 4,
) -> LayerCache:
    """Create an uncompressed layer of standard normal states.

    The states are rounded to binary32 so that they survive a KVD
    round trip unchanged.
    """
    heads = []
    for _ in range(h_kv):
        keys = rng.standard_normal((seq_len, d_h)).astype(np.float32)
        values = rng.standard_normal((seq_len, d_h)).astype(np.float32)
        heads.append(
            HeadCache.from_states(
                keys.astype(np.float64), values.astype(np.float64)
            )
        )
    return LayerCache(layer_index=layer_index, heads=heads)


def random_caches(
    seed: int,
    *,
    n_layers: int = 2,
    h_kv: int = 2,
    seq_len: int = 64,
    d_h: int = 4,
) -> list[LayerCache]:
    """Create uncompressed caches for ``n_layers`` layers."""
    rng = np.random.default_rng(seed)
    return [
        random_layer(
            rng, layer_index=i, h_kv=h_kv, seq_len=seq_len, d_h=d_h
        )
        for i in range(n_layers)
    ]
