"""Flat parameter-vector primitives used by the aggregation rules.

Every vector is a one-dimensional ``float64`` numpy array. The functions are
pure and never modify their inputs.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .exceptions import DimensionError, PreconditionError

__all__ = [
    "as_vector",
    "cosine_distance",
    "cosine_similarity",
    "elementwise_median",
    "squared_euclidean",
    "accumulate",
]


def as_vector(v) -> np.ndarray:
    """Return ``v`` as a 1-D float64 array (no copy when already one)."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    return arr


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.size} != {b.size}")
    return a, b


def cosine_similarity(a, b) -> float:
    """Cosine similarity in [-1, 1]; 0.0 when either vector has zero norm."""
    a, b = _pair(a, b)
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    # np.dot(a, b) and np.dot(b, a) multiply the same pairs in the same order,
    # and na * nb is commutative, so the result is symmetric bit for bit.
    sim = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, sim))


def cosine_distance(a, b) -> float:
    """``1 - cos(a, b)`` in [0, 2].

    A zero vector is at distance exactly 1.0 from everything, so a client
    that submitted nothing is never grouped with anyone.
    """
    return 1.0 - cosine_similarity(a, b)


def elementwise_median(vs: Sequence) -> np.ndarray:
    """Per-coordinate median; even counts take the mean of the middle pair."""
    if len(vs) == 0:
        raise PreconditionError("elementwise_median needs at least one vector")
    first = as_vector(vs[0])
    for v in vs[1:]:
        _pair(first, v)
    if len(vs) == 1:
        return first.copy()
    return np.median(np.stack([as_vector(v) for v in vs]), axis=0)


def squared_euclidean(a, b) -> float:
    a, b = _pair(a, b)
    diff = a - b
    return float(np.dot(diff, diff))


def accumulate(history, update) -> np.ndarray:
    """Add one round's update to a running sum."""
    history, update = _pair(history, update)
    return history + update
