"""Dense-matrix kernels used by scoring and token selection.

Every kernel accumulates in binary64. Inputs are coerced to ``float64``
arrays, so callers may pass lists or lower-precision arrays.
"""

from __future__ import annotations

from typing import Any, TypeAlias

import numpy as np
import numpy.typing as npt

from .exceptions import EmptyReferenceError, ShapeError, TopKError

__all__ = [
    "Matrix",
    "RealVector",
    "IndexVector",
    "as_matrix",
    "as_vector",
    "column_min_max",
    "row_std",
    "softmax",
    "top_k_indices",
]

Matrix: TypeAlias = npt.NDArray[np.float64]
"""A two-dimensional array, rows are tokens and columns are channels."""

RealVector: TypeAlias = npt.NDArray[np.float64]
"""A one-dimensional array of real numbers."""

IndexVector: TypeAlias = npt.NDArray[np.int64]
"""A one-dimensional array of row indices or token positions."""


def as_matrix(data: Any) -> Matrix:
    """Coerce ``data`` to a two-dimensional float64 array.

    Raises
    ------
    ShapeError
        Raised if the data is not two-dimensional or has no columns.
    """
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"Expected a 2-D matrix, got shape {m.shape}")
    if m.shape[1] < 1:
        raise ShapeError("A matrix needs at least one column")
    return m


def as_vector(data: Any) -> RealVector:
    """Coerce ``data`` to a one-dimensional float64 array."""
    v = np.asarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"Expected a 1-D vector, got shape {v.shape}")
    return v


def column_min_max(m: Any) -> tuple[RealVector, RealVector]:
    """Compute the per-column minimum and maximum of a matrix.

    Parameters
    ----------
    m
        The reference matrix, with at least one row.

    Returns
    -------
    tuple
        The ``(mins, maxs)`` vectors, each with one entry per column.

    Raises
    ------
    EmptyReferenceError
        Raised if the matrix has no rows.
    """
    m = as_matrix(m)
    if m.shape[0] == 0:
        raise EmptyReferenceError
    return m.min(axis=0), m.max(axis=0)


def row_std(m: Any) -> RealVector:
    """Population standard deviation of each row (divisor = columns)."""
    m = as_matrix(m)
    return m.std(axis=1, ddof=0)


def softmax(v: Any) -> RealVector:
    """Overflow-safe softmax of a vector.

    The maximum is subtracted before exponentiation, so very large inputs
    do not overflow.
    """
    v = as_vector(v)
    if v.shape[0] == 0:
        raise ShapeError("softmax of an empty vector")
    e = np.exp(v - v.max())
    return e / e.sum()


def top_k_indices(scores: Any, k: int) -> IndexVector:
    """Select the indices of the ``k`` largest scores.

    Ties prefer the smaller index. The selected indices are returned in
    ascending order, so the original sequence order is preserved.

    Parameters
    ----------
    scores
        The candidate scores.
    k
        Number of indices to select, ``0 <= k <= len(scores)``.

    Returns
    -------
    numpy.ndarray
        ``k`` distinct indices, sorted ascending.

    Raises
    ------
    TopKError
        Raised if ``k`` is negative or larger than the number of scores.
    """
    scores = as_vector(scores)
    n = scores.shape[0]
    if k < 0 or k > n:
        raise TopKError(k, n)
    # A stable sort on the negated scores keeps ties in index order.
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k]).astype(np.int64)
