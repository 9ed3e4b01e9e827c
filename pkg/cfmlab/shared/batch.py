from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import math

import numpy as np

from .errors import DomainError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class WeightedBatch:
    """Sample points with per-row probability masses."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        points = as_points(self.points)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != points.shape[0]:
            raise ShapeError(f"{weights.shape[0]} weights for {points.shape[0]} points")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12 * max(1, len(weights)):
            raise DomainError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.points.shape[0]


Batch = np.ndarray
AnyBatch = Union[np.ndarray, WeightedBatch]


def as_points(x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 1)
    if arr.ndim != 2:
        raise ShapeError(f"expected an n x d matrix, got shape {arr.shape}")
    return arr


def split_batch(batch: AnyBatch) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if isinstance(batch, WeightedBatch):
        return batch.points, batch.weights
    return as_points(batch), None


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def standard_normal_logpdf(x: np.ndarray) -> np.ndarray:
    """Row-wise log N(x; 0, I)."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    return -0.5 * np.sum(x * x, axis=-1) - 0.5 * d * LOG_2PI
