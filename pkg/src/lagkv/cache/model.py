"""The domain model for per-head and per-layer KV caches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ShapeError, StaleRangeError
from ..numerics import IndexVector, Matrix, RealVector, as_matrix

__all__ = ["HeadCache", "LayerCache"]


class HeadCache:
    """The key and value states of one KV head, with the original token
    position of every retained row.

    Rows live in over-allocated buffers so that decode-time appends are
    amortised constant time; `keys`, `values` and `positions` are views of
    the occupied prefix.

    Parameters
    ----------
    keys
        Key states, one row per retained token (``seq × d_h``).
    values
        Value states, same shape as ``keys``.
    positions
        Original token positions of the rows, strictly increasing.
    """

    def __init__(
        self, *, keys: Matrix, values: Matrix, positions: IndexVector
    ) -> None:
        keys = as_matrix(keys)
        values = as_matrix(values)
        positions = np.asarray(positions, dtype=np.int64)
        if keys.shape != values.shape:
            raise ShapeError(
                f"Key shape {keys.shape} differs from value shape "
                f"{values.shape}"
            )
        if positions.shape != (keys.shape[0],):
            raise ShapeError(
                f"{positions.shape[0]} positions for {keys.shape[0]} rows"
            )
        if np.any(np.diff(positions) <= 0):
            raise ShapeError("Positions must be strictly increasing")
        self._keys = keys.copy()
        self._values = values.copy()
        self._positions = positions.copy()
        self._n = keys.shape[0]

    @classmethod
    def empty(cls, d_h: int) -> HeadCache:
        """Create a head cache with no rows."""
        return cls(
            keys=np.zeros((0, d_h)),
            values=np.zeros((0, d_h)),
            positions=np.zeros(0, dtype=np.int64),
        )

    @classmethod
    def from_states(cls, keys: Matrix, values: Matrix) -> HeadCache:
        """Create an uncompressed head cache with positions ``0..seq-1``."""
        keys = as_matrix(keys)
        return cls(
            keys=keys,
            values=values,
            positions=np.arange(keys.shape[0], dtype=np.int64),
        )

    def __repr__(self) -> str:
        return f"HeadCache(seq_len={self.seq_len}, d_h={self.d_h})"

    @property
    def keys(self) -> Matrix:
        """Key states of the retained rows."""
        return self._keys[: self._n]

    @property
    def values(self) -> Matrix:
        """Value states of the retained rows."""
        return self._values[: self._n]

    @property
    def positions(self) -> IndexVector:
        """Original positions of the retained rows."""
        return self._positions[: self._n]

    @property
    def seq_len(self) -> int:
        """Number of retained rows."""
        return self._n

    @property
    def d_h(self) -> int:
        """The head dimension."""
        return int(self._keys.shape[1])

    def locate(self, start: int, stop: int) -> slice:
        """Find the rows holding original positions ``[start, stop)``.

        Raises
        ------
        StaleRangeError
            Raised unless every position in the range is still resident,
            contiguously, in this head.
        """
        positions = self.positions
        i = int(np.searchsorted(positions, start))
        j = i + (stop - start)
        if (
            stop <= start
            or j > self._n
            or positions[i] != start
            or positions[j - 1] != stop - 1
        ):
            raise StaleRangeError(start, stop)
        return slice(i, j)

    def append(
        self, key: RealVector, value: RealVector, position: int
    ) -> None:
        """Append one token's key and value rows."""
        if self._n and position <= self._positions[self._n - 1]:
            raise ShapeError(
                f"Position {position} does not follow "
                f"{self._positions[self._n - 1]}"
            )
        if self._n == self._keys.shape[0]:
            self._grow()
        self._keys[self._n] = np.reshape(key, self.d_h)
        self._values[self._n] = np.reshape(value, self.d_h)
        self._positions[self._n] = position
        self._n += 1

    def evict(self, rows: slice, keep: IndexVector) -> None:
        """Remove every row in ``rows`` except the relative indices
        ``keep`` (ascending).
        """
        width = rows.stop - rows.start
        if len(keep) == width:
            return
        head = rows.start + np.asarray(keep, dtype=np.int64)
        tail = slice(rows.stop, self._n)
        new_n = rows.start + len(head) + (self._n - rows.stop)
        for buf in (self._keys, self._values, self._positions):
            moved = np.concatenate([buf[head], buf[tail]])
            buf[rows.start : new_n] = moved
        self._n = new_n

    def copy(self) -> HeadCache:
        """Return a deep copy."""
        return HeadCache(
            keys=self.keys, values=self.values, positions=self.positions
        )

    def _grow(self) -> None:
        capacity = max(16, 2 * self._keys.shape[0])
        extra = capacity - self._keys.shape[0]
        d_h = self.d_h
        self._keys = np.vstack([self._keys, np.zeros((extra, d_h))])
        self._values = np.vstack([self._values, np.zeros((extra, d_h))])
        self._positions = np.concatenate(
            [self._positions, np.zeros(extra, dtype=np.int64)]
        )


@dataclass(kw_only=True)
class LayerCache:
    """The KV cache of one transformer layer, one `HeadCache` per KV head."""

    layer_index: int
    """Ordinal of the layer in the model."""

    heads: list[HeadCache] = field(default_factory=list)
    """Per-KV-head caches."""

    def __post_init__(self) -> None:
        if len({h.d_h for h in self.heads}) > 1:
            raise ShapeError("All heads of a layer must share d_h")

    @property
    def h_kv(self) -> int:
        """Number of KV heads."""
        return len(self.heads)

    @property
    def d_h(self) -> int:
        """Head dimension shared by every head."""
        return self.heads[0].d_h if self.heads else 0

    @property
    def seq_len(self) -> int:
        """Retained length, identical across heads after any step."""
        return self.heads[0].seq_len if self.heads else 0

    def copy(self) -> LayerCache:
        """Return a deep copy."""
        return LayerCache(
            layer_index=self.layer_index,
            heads=[h.copy() for h in self.heads],
        )
