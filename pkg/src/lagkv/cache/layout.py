"""Partition geometry and closed-form retained length and ratio."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..exceptions import EmptySequenceError

__all__ = [
    "PartitionLayout",
    "partition_layout",
    "kept_per_partition",
    "retained_length",
    "compression_ratio",
]


@dataclass(frozen=True, kw_only=True)
class PartitionLayout:
    """Decomposition of a sequence into the attention sink, the compressible
    lag partitions, and the sliding-window tail.

    The ranges are contiguous, disjoint, and cover ``[0, seq_len)``.
    """

    seq_len: int
    """Length of the decomposed sequence."""

    lag_size: int
    """Width of every compressible partition."""

    sink: range
    """Leading tokens that are always retained."""

    partitions: list[range] = field(default_factory=list)
    """Compressible partitions, each of width `lag_size`, left to right."""

    window_tail: range = range(0)
    """The last full partition plus the modulo remainder, always retained.
    """

    def reference_for(self, index: int) -> range:
        """The range that serves as the reference of partition ``index``.

        The reference is the partition's immediate successor of the same
        width, which for the final compressible partition lies at the start
        of `window_tail`.
        """
        part = self.partitions[index]
        return range(part.stop, part.stop + self.lag_size)

    @property
    def ranges(self) -> list[range]:
        """All ranges, in sequence order."""
        return [self.sink, *self.partitions, self.window_tail]


def partition_layout(
    seq_len: int, sink_size: int, lag_size: int
) -> PartitionLayout:
    """Decompose a sequence into sink, lag partitions and window tail.

    Parameters
    ----------
    seq_len
        The sequence length, L_s.
    sink_size
        The sink size, S.
    lag_size
        The partition width, L.

    Returns
    -------
    PartitionLayout
        When ``seq_len <= S + 2L`` there are no partitions and the window
        tail is ``[min(S, seq_len), seq_len)``. Otherwise there are
        ``(seq_len - S) // L - 1`` partitions and the tail holds the last
        full partition plus the remainder.
    """
    sink = range(0, min(sink_size, seq_len))
    if seq_len <= sink_size + 2 * lag_size:
        return PartitionLayout(
            seq_len=seq_len,
            lag_size=lag_size,
            sink=sink,
            window_tail=range(sink.stop, seq_len),
        )
    n_parts = (seq_len - sink_size) // lag_size - 1
    partitions = [
        range(sink_size + p * lag_size, sink_size + (p + 1) * lag_size)
        for p in range(n_parts)
    ]
    return PartitionLayout(
        seq_len=seq_len,
        lag_size=lag_size,
        sink=sink,
        partitions=partitions,
        window_tail=range(partitions[-1].stop, seq_len),
    )


def kept_per_partition(lag_size: int, retain_ratio: float) -> int:
    """Tokens kept per head from one compressed partition, ⌊r·L⌋."""
    return math.floor(retain_ratio * lag_size)


def retained_length(
    seq_len: int, sink_size: int, lag_size: int, retain_ratio: float
) -> int:
    """Length of the cache after compressing a sequence of ``seq_len``
    tokens.

    Every full partition except the last is reduced to ⌊r·L⌋ tokens; the
    sink, the last full partition, and the remainder are kept. Sequences
    no longer than ``S + 2L`` are not compressed.
    """
    if seq_len <= sink_size + 2 * lag_size:
        return seq_len
    n_full, remainder = divmod(seq_len - sink_size, lag_size)
    k = kept_per_partition(lag_size, retain_ratio)
    return sink_size + k * (n_full - 1) + lag_size + remainder


def compression_ratio(
    seq_len: int, sink_size: int, lag_size: int, retain_ratio: float
) -> float:
    """The compression ratio, ``1 - retained_length / seq_len``.

    Raises
    ------
    EmptySequenceError
        Raised if ``seq_len`` is zero.
    """
    if seq_len <= 0:
        raise EmptySequenceError
    kept = retained_length(seq_len, sink_size, lag_size, retain_ratio)
    return 1.0 - kept / seq_len
