from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..shared.batch import LOG_2PI
from ..shared.errors import ConfigError, DomainError, ShapeError
from ..shared.rng import make_rng

KINDS = ("gaussian", "eight_gaussians", "moons", "scurve", "funnel", "csv")
TWO_D_KINDS = ("eight_gaussians", "moons", "scurve")

EIGHT_GAUSSIANS_RADIUS = 2.0 * math.sqrt(2.0)
EIGHT_GAUSSIANS_STD = 0.1
MOONS_NOISE = 0.1
SCURVE_NOISE = 0.05
FUNNEL_DIM = 10

# Population moments of the raw generators, used to map them to zero mean and
# unit per-axis standard deviation with a fixed affine map.
_MOONS_MEAN = np.array([0.5, 0.25])
_MOONS_STD = np.sqrt(np.array([0.75, 0.5625 - 1.0 / math.pi]) + MOONS_NOISE**2)
_SCURVE_STD = np.sqrt(np.array([0.5, 1.5 + 4.0 / (3.0 * math.pi)]) + SCURVE_NOISE**2)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    d: int = 2
    seed: int = 0
    path: Optional[str] = None
    time_column: Optional[str] = None
    label: Optional[float] = None
    whiten: bool = True

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}", "kind")
        if self.kind in TWO_D_KINDS and self.d != 2:
            raise ConfigError(f"{self.kind} is two-dimensional, got d={self.d}", "d")
        if self.kind == "funnel" and self.d != FUNNEL_DIM:
            raise ConfigError(f"funnel is {FUNNEL_DIM}-dimensional", "d")
        if self.kind == "csv" and not self.path:
            raise ConfigError("csv datasets need a path", "path")
        if self.d < 1:
            raise ConfigError("d must be >= 1", "d")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "seed": self.seed,
            "path": self.path,
            "time_column": self.time_column,
            "label": self.label,
            "whiten": self.whiten,
        }


def eight_gaussians(n: int, rng: np.random.Generator) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(8) / 8
    centers = EIGHT_GAUSSIANS_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    idx = rng.integers(0, 8, size=n)
    return centers[idx] + EIGHT_GAUSSIANS_STD * rng.standard_normal((n, 2))


def moons(n: int, rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(0.0, np.pi, size=n)
    inner = rng.integers(0, 2, size=n).astype(bool)
    x = np.where(inner, 1.0 - np.cos(theta), np.cos(theta))
    y = np.where(inner, 0.5 - np.sin(theta), np.sin(theta))
    pts = np.stack([x, y], axis=1) + MOONS_NOISE * rng.standard_normal((n, 2))
    return (pts - _MOONS_MEAN) / _MOONS_STD


def scurve(n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.uniform(-1.5 * np.pi, 1.5 * np.pi, size=n)
    pts = np.stack([np.sin(u), np.sign(u) * (np.cos(u) - 1.0)], axis=1)
    pts = pts + SCURVE_NOISE * rng.standard_normal((n, 2))
    return pts / _SCURVE_STD


def funnel_sample(n: int, rng: np.random.Generator, d: int = FUNNEL_DIM) -> np.ndarray:
    head = rng.standard_normal(n)
    tail = rng.standard_normal((n, d - 1)) * np.exp(0.5 * head)[:, None]
    return np.hstack([head[:, None], tail])


def sample_dataset(spec: DatasetSpec, n: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Draw ``n`` points; without ``rng`` the stream is keyed by ``spec.seed`` alone."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    rng = rng if rng is not None else make_rng(spec.seed, spec.kind)
    if spec.kind == "gaussian":
        return rng.standard_normal((n, spec.d))
    if spec.kind == "eight_gaussians":
        return eight_gaussians(n, rng)
    if spec.kind == "moons":
        return moons(n, rng)
    if spec.kind == "scurve":
        return scurve(n, rng)
    if spec.kind == "funnel":
        return funnel_sample(n, rng, spec.d)
    raise ConfigError("csv datasets are loaded with load_csv, not sampled", "kind")


def _funnel_points(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != FUNNEL_DIM:
        raise ShapeError(f"funnel points are {FUNNEL_DIM}-dimensional, got {x.shape[-1]}")
    return x


def funnel_log_density(x: np.ndarray) -> np.ndarray:
    """log N(x_0; 0, 1) + sum_i log N(x_i; 0, exp(x_0)); works row-wise on batches."""
    x = _funnel_points(x)
    head = x[..., 0]
    tail = x[..., 1:]
    k = tail.shape[-1]
    log_head = -0.5 * head**2 - 0.5 * LOG_2PI
    log_tail = -0.5 * np.sum(tail**2, axis=-1) * np.exp(-head) - 0.5 * k * (LOG_2PI + head)
    return log_head + log_tail


def funnel_grad_log_density(x: np.ndarray) -> np.ndarray:
    x = _funnel_points(x)
    head = x[..., 0]
    tail = x[..., 1:]
    k = tail.shape[-1]
    g_head = -head - 0.5 * k + 0.5 * np.sum(tail**2, axis=-1) * np.exp(-head)
    g_tail = -tail * np.exp(-head)[..., None]
    return np.concatenate([g_head[..., None], g_tail], axis=-1)
