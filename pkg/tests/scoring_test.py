"""Tests for the lagkv.scoring module."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lagkv.config import Strategy
from lagkv.exceptions import ShapeError
from lagkv.numerics import top_k_indices
from lagkv.scoring import (
    ChunkPair,
    l2_score,
    lag_score,
    local_score,
    normalize_by_reference,
    rank_scores,
    score_chunk,
    window_score,
)

EPS = 1e-6


def loop_min_max(m: np.ndarray) -> tuple[list[float], list[float]]:
    """Per-channel minimum and maximum, one element at a time."""
    cols = m.shape[1]
    lows = [math.inf] * cols
    highs = [-math.inf] * cols
    for row in m.tolist():
        for c, x in enumerate(row):
            lows[c] = min(lows[c], x)
            highs[c] = max(highs[c], x)
    return lows, highs


def loop_spread_softmax(
    part: np.ndarray, reference: np.ndarray, eps: float
) -> list[float]:
    """Softmax over rows of the population std of normalised rows."""
    cols = part.shape[1]
    lows, highs = loop_min_max(reference)
    stds = []
    for row in part.tolist():
        normed = [
            (x - lows[c]) / max(highs[c] - lows[c], eps)
            for c, x in enumerate(row)
        ]
        mean = sum(normed) / cols
        stds.append(math.sqrt(sum((x - mean) ** 2 for x in normed) / cols))
    top = max(stds)
    weights = [math.exp(s - top) for s in stds]
    norm = sum(weights)
    return [w / norm for w in weights]


def loop_lag_score(
    chunk: ChunkPair, ref: ChunkPair, eps: float
) -> list[float]:
    """Score a chunk against a reference one element at a time."""
    keys = loop_spread_softmax(chunk.keys, ref.keys, eps)
    values = loop_spread_softmax(chunk.values, ref.values, eps)
    return [k + v for k, v in zip(keys, values, strict=True)]


def loop_local_score(chunk: ChunkPair, eps: float) -> list[float]:
    """Score a chunk against its own statistics one element at a time."""
    return loop_lag_score(chunk, chunk, eps)


def loop_l2_score(keys: np.ndarray) -> list[float]:
    """Negative Euclidean norm of each key row."""
    return [
        -math.sqrt(sum(float(x) ** 2 for x in row)) for row in keys.tolist()
    ]


ORACLE_SHAPES = ((8, 4), (33, 16), (128, 32), (512, 64), (1024, 128))
"""Chunk shapes cycled through by the seeded oracle comparisons."""


def seeded_chunks(seed: int) -> tuple[ChunkPair, ChunkPair]:
    rng = np.random.default_rng(seed)
    shape = ORACLE_SHAPES[seed % len(ORACLE_SHAPES)]
    scale = rng.uniform(0.1, 10.0)
    chunk = pair(
        scale * rng.standard_normal(shape), rng.standard_normal(shape)
    )
    ref = pair(
        scale * rng.standard_normal(shape), rng.standard_normal(shape)
    )
    return chunk, ref


def pair(keys: object, values: object | None = None) -> ChunkPair:
    keys = np.asarray(keys, dtype=np.float64)
    return ChunkPair(
        keys=keys, values=keys if values is None else np.asarray(values)
    )


def test_normalize_by_reference() -> None:
    out = normalize_by_reference([[0, 4], [1, 2]], [[0, 0], [2, 4]], EPS)
    assert out.tolist() == [[0, 1], [0.5, 0.5]]


def test_normalize_constant_channel() -> None:
    out = normalize_by_reference([[1, 3]], [[0, 3], [2, 3]], 0.5)
    assert out.tolist() == [[0.5, 0.0]]
    out = normalize_by_reference([[1, 4]], [[0, 3], [2, 3]], EPS)
    assert np.isfinite(out).all()
    assert out[0, 1] == pytest.approx(1 / EPS)


def test_normalize_self_bounds() -> None:
    m = np.random.default_rng(1).standard_normal((32, 8))
    out = normalize_by_reference(m, m, EPS)
    assert out.min() >= 0.0
    assert out.max() <= 1.0


def test_normalize_shape_mismatch() -> None:
    with pytest.raises(ShapeError):
        normalize_by_reference(np.zeros((2, 3)), np.zeros((2, 2)), EPS)
    with pytest.raises(ShapeError):
        ChunkPair(keys=np.zeros((2, 3)), values=np.zeros((3, 3)))


def test_lag_score_worked_example() -> None:
    chunk = pair([[0, 4], [1, 2]])
    ref = pair([[0, 0], [2, 4]])
    scores = lag_score(chunk, ref, EPS)
    np.testing.assert_allclose(scores.key_scores, [0.6225, 0.3775], atol=1e-4)
    np.testing.assert_allclose(scores.scores, [1.2450, 0.7550], atol=1e-3)
    assert scores.strategy is Strategy.lag
    assert len(scores) == 2


def test_lag_score_identical_rows() -> None:
    chunk = pair(np.tile([[1.0, -2.0, 3.0]], (8, 1)))
    ref = pair(np.random.default_rng(2).standard_normal((8, 3)))
    np.testing.assert_allclose(
        lag_score(chunk, ref, EPS).scores, [2 / 8] * 8, atol=1e-12
    )


@pytest.mark.parametrize("seed", range(100))
def test_lag_score_loop_oracle(seed: int) -> None:
    chunk, ref = seeded_chunks(seed)
    np.testing.assert_allclose(
        lag_score(chunk, ref, EPS).scores,
        loop_lag_score(chunk, ref, EPS),
        rtol=0,
        atol=1e-9,
    )


@pytest.mark.parametrize("seed", range(100))
def test_local_score_loop_oracle(seed: int) -> None:
    chunk, _ = seeded_chunks(seed)
    np.testing.assert_allclose(
        local_score(chunk, EPS).scores,
        loop_local_score(chunk, EPS),
        rtol=0,
        atol=1e-9,
    )


@pytest.mark.parametrize("seed", range(100))
def test_l2_score_loop_oracle(seed: int) -> None:
    chunk, _ = seeded_chunks(seed)
    scores = l2_score(chunk.keys)
    np.testing.assert_allclose(
        scores.scores, loop_l2_score(chunk.keys), rtol=1e-12, atol=1e-9
    )
    assert not scores.value_scores.any()


def test_lag_score_shape_mismatch() -> None:
    with pytest.raises(ShapeError):
        lag_score(pair(np.zeros((2, 3))), pair(np.zeros((2, 2))), EPS)


def test_local_score() -> None:
    scores = local_score(pair([[0, 4], [1, 2]]), EPS)
    np.testing.assert_allclose(scores.key_scores, [0.5, 0.5])
    assert local_score(pair([[3.0, 1.0]]), EPS).scores.tolist() == [2.0]


def test_local_equals_self_referenced_lag() -> None:
    chunk = pair(np.random.default_rng(4).standard_normal((16, 4)))
    np.testing.assert_array_equal(
        local_score(chunk, EPS).scores, lag_score(chunk, chunk, EPS).scores
    )


def test_l2_score() -> None:
    scores = l2_score([[3, 4], [0, 0]])
    assert scores.scores.tolist() == [-5, 0]
    zeros = l2_score(np.zeros((4, 3)))
    assert zeros.scores.tolist() == [0, 0, 0, 0]
    assert top_k_indices(zeros.scores, 2).tolist() == [0, 1]


def test_l2_score_scaling() -> None:
    keys = np.random.default_rng(5).standard_normal((32, 8))
    base = l2_score(keys).scores
    doubled = l2_score(2 * keys).scores
    np.testing.assert_allclose(doubled, 2 * base)
    assert (
        top_k_indices(doubled, 8).tolist() == top_k_indices(base, 8).tolist()
    )


def test_window_score() -> None:
    scores = window_score(4)
    assert top_k_indices(scores.scores, 2).tolist() == [2, 3]


def test_score_chunk_dispatch() -> None:
    chunk = pair([[0, 4], [1, 2]])
    ref = pair([[0, 0], [2, 4]])
    for strategy in Strategy:
        assert score_chunk(strategy, chunk, ref, EPS).strategy is strategy


def test_rank_scores() -> None:
    assert rank_scores([0.4, 0.1, 0.3, 0.2]).tolist() == [0.75, 0, 0.5, 0.25]


def test_rank_scores_ties_follow_top_k() -> None:
    ties = [0.5] * 4
    assert rank_scores(ties).tolist() == [0.75, 0.5, 0.25, 0]
    for scores in (ties, l2_score(np.zeros((6, 3))).scores, [1, 2, 2, 1]):
        ranks = rank_scores(scores)
        by_rank = sorted(np.argsort(-ranks, kind="stable")[:2].tolist())
        assert by_rank == top_k_indices(scores, 2).tolist()


chunks = st.integers(2, 12).flatmap(
    lambda rows: st.tuples(
        *[
            arrays(
                np.float64,
                (rows, 5),
                elements=st.floats(min_value=-10, max_value=10),
            )
            for _ in range(4)
        ]
    )
)


@settings(max_examples=50)
@given(chunks)
def test_lag_score_sums_to_two(
    data: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
) -> None:
    ck, cv, rk, rv = data
    scores = lag_score(pair(ck, cv), pair(rk, rv), EPS).scores
    assert abs(scores.sum() - 2.0) <= 1e-9
    assert np.all(scores > 0)


AFFINE_SCALES = (0.25, 0.5, 1.0, 2.0, 4.0)

grid_chunks = st.integers(2, 12).flatmap(
    lambda rows: st.tuples(
        *[
            arrays(
                np.float64,
                (rows, 5),
                elements=st.integers(-10, 10).map(float),
            )
            for _ in range(4)
        ]
    )
)


@settings(max_examples=50)
@given(
    grid_chunks,
    st.lists(st.sampled_from(AFFINE_SCALES), min_size=5, max_size=5),
    st.lists(st.integers(-5, 5), min_size=5, max_size=5),
)
def test_lag_score_affine_invariance(
    data: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    scale: list[float],
    offset: list[int],
) -> None:
    ck, cv, rk, rv = data
    assume(np.all(np.ptp(rk, axis=0) > 0))
    a = np.array(scale)
    b = np.array(offset, dtype=np.float64)
    base = lag_score(pair(ck, cv), pair(rk, rv), EPS).scores
    mapped = lag_score(
        pair(ck * a + b, cv), pair(rk * a + b, rv), EPS
    ).scores
    np.testing.assert_allclose(mapped, base, atol=1e-12)


@settings(max_examples=50)
@given(chunks)
def test_lag_score_permutations(
    data: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
) -> None:
    ck, cv, rk, rv = data
    rows = ck.shape[0]
    base = lag_score(pair(ck, cv), pair(rk, rv), EPS).scores

    ref_order = np.random.default_rng(rows).permutation(rows)
    shuffled_ref = lag_score(
        pair(ck, cv), pair(rk[ref_order], rv[ref_order]), EPS
    ).scores
    np.testing.assert_array_equal(shuffled_ref, base)

    order = np.random.default_rng(rows + 1).permutation(rows)
    shuffled = lag_score(pair(ck[order], cv[order]), pair(rk, rv), EPS)
    np.testing.assert_allclose(shuffled.scores, base[order], atol=1e-12)


def test_largest_spread_wins() -> None:
    rng = np.random.default_rng(6)
    keys = rng.uniform(0.4, 0.6, size=(16, 8))
    keys[9] = [0, 1, 0, 1, 0, 1, 0, 1]
    ref_keys = rng.uniform(0, 1, size=(16, 8))
    ref_keys[0] = 0.0
    ref_keys[1] = 1.0
    scores = lag_score(pair(keys), pair(ref_keys), EPS).scores
    assert int(np.argmax(scores)) == 9
