"""The recursive partition compressor.

Partitions of ``L`` tokens following the attention sink are compressed left
to right, each scored against the raw partition right after it. Eviction
only removes rows of the partition being compressed, so the reference rows
are always raw when they are read, and decoding one token at a time
replays exactly the partitioning of a one-shot compression.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cache.layout import partition_layout
from .cache.model import HeadCache, LayerCache
from .config import CompressionMode, CompressorConfig
from .numerics import IndexVector, RealVector, top_k_indices
from .reports import LayerMetrics, MetricsReport
from .scoring import ChunkPair, ScoreVector, score_chunk

__all__ = [
    "CompressionState",
    "CompressionEvent",
    "select_partition",
    "compress_partition",
    "compress_event",
    "compress_prefill",
    "step_decode",
    "run_compression",
]

logger = logging.getLogger(__name__)


@dataclass(kw_only=True)
class CompressionState:
    """Decode-time bookkeeping of one layer."""

    config: CompressorConfig
    """The compressor configuration."""

    raw_consumed: int
    """Original tokens already folded into the compressed region; the sink
    counts as consumed from the start.
    """

    raw_total: int = 0
    """Original tokens seen so far."""

    @classmethod
    def start(cls, config: CompressorConfig) -> CompressionState:
        """The state of an empty cache."""
        return cls(config=config, raw_consumed=config.sink_size)

    @classmethod
    def after_prefill(
        cls, raw_total: int, config: CompressorConfig
    ) -> CompressionState:
        """The state left by `compress_prefill` on ``raw_total`` tokens."""
        layout = partition_layout(
            raw_total, config.sink_size, config.lag_size
        )
        consumed = (
            layout.partitions[-1].stop
            if layout.partitions
            else config.sink_size
        )
        return cls(config=config, raw_consumed=consumed, raw_total=raw_total)

    @property
    def pending(self) -> int:
        """Raw tokens not yet folded into the compressed region."""
        return self.raw_total - self.raw_consumed

    @property
    def is_due(self) -> bool:
        """Whether a partition and its reference are both complete and the
        sequence is longer than ``S + 2L``.
        """
        lag = self.config.lag_size
        return (
            self.pending >= 2 * lag
            and self.raw_total > self.config.sink_size + 2 * lag
        )


@dataclass(kw_only=True)
class CompressionEvent:
    """The compression of one partition of one layer."""

    layer: int
    """Layer index."""

    partition_range: range
    """Original positions of the compressed partition."""

    kept_positions: list[IndexVector] = field(default_factory=list)
    """Retained original positions, per head."""

    scores: list[ScoreVector] = field(default_factory=list)
    """Token scores of the partition, per head."""


def select_partition(
    head: HeadCache, part: range, ref: range, config: CompressorConfig
) -> tuple[slice, IndexVector, ScoreVector]:
    """Score a partition of one head and choose the rows to keep.

    Returns
    -------
    tuple
        The rows of the partition in the head cache, the relative indices
        of the rows to keep, and the scores.

    Raises
    ------
    StaleRangeError
        Raised if either range is not fully resident in the head.
    """
    rows = head.locate(part.start, part.stop)
    ref_rows = head.locate(ref.start, ref.stop)
    chunk = ChunkPair(keys=head.keys[rows], values=head.values[rows])
    reference = ChunkPair(
        keys=head.keys[ref_rows], values=head.values[ref_rows]
    )
    scores = score_chunk(config.strategy, chunk, reference, config.eps)
    keep = top_k_indices(scores.scores, config.kept_per_partition)
    return rows, keep, scores


def compress_partition(
    head: HeadCache, part: range, ref: range, config: CompressorConfig
) -> list[int]:
    """Compress one partition of one head in place.

    Returns
    -------
    list of int
        The retained original positions, in order.
    """
    rows, keep, _ = select_partition(head, part, ref, config)
    kept = head.positions[rows][keep].tolist()
    head.evict(rows, keep)
    return kept


def compress_event(
    layer: LayerCache, part: range, config: CompressorConfig
) -> CompressionEvent:
    """Compress one partition across every head of a layer.

    All heads are scored before any row is removed, so the layer is
    updated in a single step.
    """
    ref = range(part.stop, part.stop + config.lag_size)
    selections = [
        select_partition(head, part, ref, config) for head in layer.heads
    ]
    event = CompressionEvent(layer=layer.layer_index, partition_range=part)
    for head, (rows, keep, scores) in zip(
        layer.heads, selections, strict=True
    ):
        event.kept_positions.append(head.positions[rows][keep].copy())
        event.scores.append(scores)
    for head, (rows, keep, _) in zip(layer.heads, selections, strict=True):
        head.evict(rows, keep)
    logger.debug(
        f"Layer {layer.layer_index}: compressed [{part.start}, {part.stop})"
        f" keeping {config.kept_per_partition} per head"
    )
    return event


def compress_prefill(
    layer: LayerCache, config: CompressorConfig
) -> list[CompressionEvent]:
    """Compress an uncompressed prompt cache once, after prefill.

    Every compressible partition is compressed left to right; the sink and
    the window tail are untouched. Layers in ``config.skip_layers`` are
    left unmodified.
    """
    if config.is_skipped(layer.layer_index):
        return []
    layout = partition_layout(
        layer.seq_len, config.sink_size, config.lag_size
    )
    return [compress_event(layer, part, config) for part in layout.partitions]


def step_decode(
    state: CompressionState,
    layer: LayerCache,
    new_keys: Sequence[RealVector],
    new_values: Sequence[RealVector],
) -> CompressionEvent | None:
    """Append one decoded token to every head and compress if due.

    Parameters
    ----------
    state
        Bookkeeping of the layer, advanced in place.
    layer
        The layer cache, appended to in place.
    new_keys
        One key row of length ``d_h`` per head.
    new_values
        One value row of length ``d_h`` per head.

    Returns
    -------
    CompressionEvent or None
        The compression performed by this step, if any. At most one
        partition is compressed per step.
    """
    position = state.raw_total
    rows = zip(layer.heads, new_keys, new_values, strict=True)
    for head, key, value in rows:
        head.append(key, value, position)
    state.raw_total += 1
    if state.config.is_skipped(layer.layer_index) or not state.is_due:
        return None
    start = state.raw_consumed
    part = range(start, start + state.config.lag_size)
    event = compress_event(layer, part, state.config)
    state.raw_consumed = part.stop
    return event


def _replay_incremental(
    source: LayerCache, config: CompressorConfig
) -> tuple[LayerCache, list[CompressionEvent]]:
    layer = LayerCache(
        layer_index=source.layer_index,
        heads=[HeadCache.empty(source.d_h) for _ in source.heads],
    )
    state = CompressionState.start(config)
    events: list[CompressionEvent] = []
    for t in range(source.seq_len):
        event = step_decode(
            state,
            layer,
            [h.keys[t] for h in source.heads],
            [h.values[t] for h in source.heads],
        )
        if event is not None:
            events.append(event)
    return layer, events


def _check_uncompressed(layer: LayerCache) -> None:
    for head in layer.heads:
        if head.seq_len:
            head.locate(0, head.seq_len)


def _compress_layer(
    source: LayerCache, config: CompressorConfig, mode: CompressionMode
) -> tuple[LayerCache, LayerMetrics]:
    _check_uncompressed(source)
    if mode is CompressionMode.incremental:
        layer, events = _replay_incremental(source, config)
    else:
        layer = source.copy()
        events = compress_prefill(layer, config)

    raw_length = source.seq_len
    all_scores: RealVector = np.concatenate(
        [s.scores for e in events for s in e.scores] or [np.zeros(0)]
    )
    has_scores = all_scores.shape[0] > 0
    metrics = LayerMetrics(
        layer=layer.layer_index,
        raw_length=raw_length,
        retained_length=layer.seq_len,
        achieved_ratio=(
            1.0 - layer.seq_len / raw_length if raw_length else 0.0
        ),
        events=len(events),
        strategy=config.strategy.value,
        skipped=config.is_skipped(layer.layer_index),
        score_min=float(all_scores.min()) if has_scores else None,
        score_max=float(all_scores.max()) if has_scores else None,
        score_mean=float(all_scores.mean()) if has_scores else None,
        kept_positions=[h.positions.tolist() for h in layer.heads],
    )
    logger.info(
        f"Layer {metrics.layer}: {metrics.raw_length} -> "
        f"{metrics.retained_length} tokens in {metrics.events} events"
    )
    return layer, metrics


def run_compression(
    caches: Sequence[LayerCache],
    config: CompressorConfig,
    mode: CompressionMode = CompressionMode.oneshot,
    *,
    jobs: int = 1,
) -> tuple[list[LayerCache], MetricsReport]:
    """Compress every layer of an uncompressed cache.

    The input caches are not modified. Layers are independent and are
    compressed on up to ``jobs`` threads; results keep the layer order.

    Raises
    ------
    StaleRangeError
        Raised if a layer's positions are not ``0..seq_len-1``, i.e. the
        cache has already been compressed.
    """
    mode = CompressionMode(mode)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            results = list(
                executor.map(
                    lambda c: _compress_layer(c, config, mode), caches
                )
            )
    else:
        results = [_compress_layer(c, config, mode) for c in caches]
    layers = [layer for layer, _ in results]
    report = MetricsReport(layers=[metrics for _, metrics in results])
    return layers, report
