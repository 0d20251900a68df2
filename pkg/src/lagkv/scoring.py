"""Token-importance scoring for one partition of one KV head.

The ``lag`` and ``local`` strategies min-max normalise a chunk's key and
value states channel by channel, measure each token's spread across
channels, and turn the spreads into a softmax distribution over the chunk.
Key and value distributions are summed, so every score lies in ``(0, 2)``
and a chunk's scores sum to 2. Key statistics only ever normalise keys,
and value statistics only ever normalise values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Strategy
from .exceptions import ShapeError
from .numerics import (
    Matrix,
    RealVector,
    as_matrix,
    column_min_max,
    row_std,
    softmax,
)

__all__ = [
    "ChunkPair",
    "ScoreVector",
    "normalize_by_reference",
    "lag_score",
    "local_score",
    "l2_score",
    "window_score",
    "score_chunk",
    "rank_scores",
]


@dataclass(frozen=True, kw_only=True)
class ChunkPair:
    """Key and value rows of one partition of one KV head."""

    keys: Matrix
    """Key rows (``L × d_h``)."""

    values: Matrix
    """Value rows, same shape as `keys`."""

    def __post_init__(self) -> None:
        keys = as_matrix(self.keys)
        values = as_matrix(self.values)
        if keys.shape != values.shape:
            raise ShapeError(
                f"Chunk keys {keys.shape} and values {values.shape} differ"
            )
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "values", values)

    @property
    def rows(self) -> int:
        """Number of tokens in the chunk."""
        return int(self.keys.shape[0])


@dataclass(frozen=True, kw_only=True)
class ScoreVector:
    """Per-token scores of a chunk, with their key and value parts."""

    strategy: Strategy
    """The strategy that produced the scores."""

    key_scores: RealVector
    """The part of the score contributed by the key states."""

    value_scores: RealVector
    """The part of the score contributed by the value states."""

    @property
    def scores(self) -> RealVector:
        """Total score of each token."""
        return self.key_scores + self.value_scores

    def __len__(self) -> int:
        return int(self.key_scores.shape[0])


def normalize_by_reference(chunk: Matrix, ref: Matrix, eps: float) -> Matrix:
    """Min-max normalise ``chunk`` with the per-channel range of ``ref``.

    Each channel is shifted by the reference minimum and divided by the
    reference range, clamped below at ``eps``. Values outside the
    reference range map outside ``[0, 1]``.

    Raises
    ------
    ShapeError
        Raised if the column counts differ.
    EmptyReferenceError
        Raised if the reference has no rows.
    """
    chunk = as_matrix(chunk)
    ref = as_matrix(ref)
    if chunk.shape[1] != ref.shape[1]:
        raise ShapeError(
            f"Chunk has {chunk.shape[1]} channels, reference has "
            f"{ref.shape[1]}"
        )
    mins, maxs = column_min_max(ref)
    return (chunk - mins) / np.maximum(maxs - mins, eps)


def _spread_softmax(chunk: Matrix, ref: Matrix, eps: float) -> RealVector:
    return softmax(row_std(normalize_by_reference(chunk, ref, eps)))


def lag_score(chunk: ChunkPair, ref: ChunkPair, eps: float) -> ScoreVector:
    """Score a chunk against the partition that follows it."""
    if chunk.keys.shape[1] != ref.keys.shape[1]:
        raise ShapeError("Chunk and reference have different d_h")
    return ScoreVector(
        strategy=Strategy.lag,
        key_scores=_spread_softmax(chunk.keys, ref.keys, eps),
        value_scores=_spread_softmax(chunk.values, ref.values, eps),
    )


def local_score(chunk: ChunkPair, eps: float) -> ScoreVector:
    """Score a chunk against its own min-max statistics."""
    return ScoreVector(
        strategy=Strategy.local,
        key_scores=_spread_softmax(chunk.keys, chunk.keys, eps),
        value_scores=_spread_softmax(chunk.values, chunk.values, eps),
    )


def l2_score(chunk_keys: Matrix) -> ScoreVector:
    """Score tokens by the negative Euclidean norm of their key rows.

    Value states do not contribute.
    """
    keys = as_matrix(chunk_keys)
    norms = np.linalg.norm(keys, axis=1)
    return ScoreVector(
        strategy=Strategy.l2norm,
        key_scores=-norms,
        value_scores=np.zeros_like(norms),
    )


def window_score(rows: int) -> ScoreVector:
    """Score tokens by recency, so top-k keeps the most recent rows."""
    recency = np.arange(rows, dtype=np.float64) / max(rows, 1)
    return ScoreVector(
        strategy=Strategy.window_only,
        key_scores=recency,
        value_scores=np.zeros(rows),
    )


def score_chunk(
    strategy: Strategy, chunk: ChunkPair, ref: ChunkPair, eps: float
) -> ScoreVector:
    """Dispatch to the scoring function of ``strategy``.

    ``ref`` is only consulted by the ``lag`` strategy.
    """
    match strategy:
        case Strategy.lag:
            return lag_score(chunk, ref, eps)
        case Strategy.local:
            return local_score(chunk, eps)
        case Strategy.l2norm:
            return l2_score(chunk.keys)
        case Strategy.window_only:
            return window_score(chunk.rows)
    raise ValueError(f"Unknown strategy {strategy!r}")


def rank_scores(scores: RealVector) -> RealVector:
    """Replace scores by their rank within the chunk, divided by its length.

    Tied scores rank the smaller index higher, matching the tie rule of
    `~lagkv.numerics.top_k_indices`, so the top-k by rank is the kept set.
    Ranks are comparable across chunks whose raw scores are not.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    order = np.lexsort((-np.arange(n), scores))
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n)
    return ranks / max(n, 1)
