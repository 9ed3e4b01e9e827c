from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from ..shared.batch import LOG_2PI
from ..shared.errors import ConfigError, DegenerateDensityError, DomainError, ShapeError

VARIANTS = ("fm_gaussian", "icfm", "otcfm", "sbcfm", "icfm_gaussian_source")

# Log-densities below this underflow exp() in double precision.
LOG_DENSITY_FLOOR = -745.0

# Interval training times are drawn from, per variant. The bridge field is
# singular at both ends; the Gaussian-source field is singular at t = 0.
TRAIN_TIME_INTERVAL = {
    "fm_gaussian": (0.0, 1.0),
    "icfm": (0.0, 1.0),
    "otcfm": (0.0, 1.0),
    "sbcfm": (0.01, 0.99),
    "icfm_gaussian_source": (0.01, 1.0),
}


@dataclass(frozen=True)
class PathSpec:
    """A Gaussian conditional probability path: variant tag plus its sigma."""

    variant: str
    sigma: float = 0.1

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown path variant {self.variant!r}", "path.variant")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}", "path.sigma")
        if self.variant == "sbcfm" and self.sigma <= 0:
            raise ConfigError("sbcfm needs sigma > 0", "path.sigma")
        if self.variant == "fm_gaussian" and not self.sigma < 1:
            raise ConfigError("fm_gaussian needs sigma in [0, 1)", "path.sigma")

    @property
    def needs_source(self) -> bool:
        return self.variant != "fm_gaussian"

    def to_dict(self) -> dict:
        return {"variant": self.variant, "sigma": self.sigma}


def _arrays(spec: PathSpec, x0, x1, t) -> Tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    x1 = np.asarray(x1, dtype=np.float64)
    x0 = None if x0 is None or not spec.needs_source else np.asarray(x0, dtype=np.float64)
    if spec.needs_source and x0 is None:
        raise ShapeError(f"{spec.variant} conditions on a pair (x0, x1)")
    if x0 is not None and x0.shape != x1.shape:
        raise ShapeError(f"x0 {x0.shape} and x1 {x1.shape} must share a shape")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1) or not np.all(np.isfinite(t)):
        raise DomainError("t must lie in [0, 1]")
    return x0, x1, t


def _std(spec: PathSpec, t: np.ndarray) -> np.ndarray:
    s = spec.sigma
    if spec.variant == "fm_gaussian":
        return 1.0 - (1.0 - s) * t
    if spec.variant in ("icfm", "otcfm"):
        return np.full_like(t, s)
    if spec.variant == "sbcfm":
        return s * np.sqrt(t * (1.0 - t))
    return np.sqrt((s * t) ** 2 + 2.0 * s * t * (1.0 - t))


def _mean(spec: PathSpec, x0, x1, t: np.ndarray) -> np.ndarray:
    tt = t[..., None]
    if spec.variant == "fm_gaussian":
        return tt * x1
    return tt * x1 + (1.0 - tt) * x0


def mean_std(spec: PathSpec, x0, x1, t) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and standard deviation of p_t(x | z).

    ``x0``/``x1`` have shape (..., d) and ``t`` broadcasts against (...);
    ``x0`` is ignored for fm_gaussian.
    """
    x0, x1, t = _arrays(spec, x0, x1, t)
    t = np.broadcast_to(t, x1.shape[:-1]).astype(np.float64)
    std = _std(spec, t)
    return _mean(spec, x0, x1, t), (float(std) if std.ndim == 0 else std)


def sample_xt(spec: PathSpec, x0, x1, t, rng: np.random.Generator) -> np.ndarray:
    mu, std = mean_std(spec, x0, x1, t)
    std = np.asarray(std)
    noise = rng.standard_normal(mu.shape)
    return np.where(std[..., None] > 0, mu + std[..., None] * noise, mu)


def cond_field(spec: PathSpec, x0, x1, t, x) -> np.ndarray:
    """Conditional vector field u_t(x | z) that generates the path."""
    x0, x1, t = _arrays(spec, x0, x1, t)
    x = np.asarray(x, dtype=np.float64)
    t = np.broadcast_to(t, x.shape[:-1]).astype(np.float64)
    tt = t[..., None]
    v = spec.variant
    s = spec.sigma
    if v in ("icfm", "otcfm"):
        return np.broadcast_to(x1 - x0, x.shape).copy()
    if v == "fm_gaussian":
        denom = 1.0 - (1.0 - s) * tt
        if np.any(denom <= 0):
            raise DomainError("fm_gaussian field is singular at t = 1 when sigma = 0")
        return (x1 - (1.0 - s) * x) / denom
    mu = _mean(spec, x0, x1, t)
    if v == "sbcfm":
        if np.any((t <= 0) | (t >= 1)):
            raise DomainError("bridge field is singular at t in {0, 1}")
        coef = (1.0 - 2.0 * tt) / (2.0 * tt * (1.0 - tt))
        return coef * (x - mu) + (x1 - x0)
    # Gaussian-source path: d/dt log std = (s^2 t + s (1 - 2t)) / std^2
    var = (s * tt) ** 2 + 2.0 * s * tt * (1.0 - tt)
    if s > 0 and np.any(var <= 0):
        raise DomainError("Gaussian-source field is singular at t = 0")
    if s == 0:
        return x1 - x0 + 0.0 * x
    return (s * s * tt + s * (1.0 - 2.0 * tt)) / var * (x - mu) + (x1 - x0)


def log_density(spec: PathSpec, x0, x1, t, x) -> np.ndarray:
    """log p_t(x | z); point masses (std = 0) give 0 on the mean and -inf elsewhere."""
    mu, std = mean_std(spec, x0, x1, t)
    x = np.asarray(x, dtype=np.float64)
    d = mu.shape[-1]
    sq = np.sum((x - mu) ** 2, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = -0.5 * sq / std**2 - d * np.log(std) - 0.5 * d * LOG_2PI
    return np.where(std > 0, dens, np.where(sq == 0, 0.0, -np.inf))


def _mixture_field(spec: PathSpec, x0, x1, log_q: np.ndarray, t, x) -> np.ndarray:
    """sum_i u(x|z_i) p(x|z_i) q_i / sum_i p(x|z_i) q_i over the second-to-last axis of x0/x1.

    Shapes: x0, x1 (..., m, d); log_q (..., m); t (...); x (..., d).
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    t_m = np.broadcast_to(t[..., None], log_q.shape)
    x_m = np.broadcast_to(x[..., None, :], np.asarray(x1).shape)
    _, std = mean_std(spec, x0, x1, t_m)
    point_mass = np.any(std == 0)
    log_p = log_density(spec, x0, x1, t_m, x_m)
    if point_mass:
        # a matched point mass outweighs every density
        hit = (std == 0) & (log_p == 0.0)
        log_p = np.where(np.any(hit, axis=-1, keepdims=True), np.where(hit, 0.0, -np.inf), log_p)
    if np.any(np.max(log_p, axis=-1) < LOG_DENSITY_FLOOR):
        raise DegenerateDensityError("all conditional densities underflow at the query point")
    log_w = log_p + log_q
    w = np.exp(log_w - logsumexp(log_w, axis=-1, keepdims=True))
    # conditional fields at the endpoints of singular variants are never weighted
    # in (their std is 0 there), so evaluate them on an interior time instead
    if spec.variant == "sbcfm":
        t_eval = np.clip(t_m, 1e-12, 1.0 - 1e-12)
    elif spec.variant == "icfm_gaussian_source":
        t_eval = np.maximum(t_m, 1e-12)
    else:
        t_eval = t_m
    u = cond_field(spec, x0, x1, t_eval, x_m)
    return np.sum(w[..., None] * u, axis=-2)


def _log_masses(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if np.any(q < 0):
        raise DomainError("condition masses must be nonnegative")
    with np.errstate(divide="ignore"):
        return np.log(q)


def marginal_field_oracle(spec: PathSpec, x0s, x1s, q, t, x) -> np.ndarray:
    """Exact marginal field u_t(x) for a finitely supported q(z).

    ``x0s``/``x1s`` hold the m support conditions as (m, d) rows, ``q`` their
    masses; ``x`` is a single d-vector or a batch (n, d) with times ``t``.
    """
    q = np.asarray(q, dtype=np.float64)
    if abs(q.sum() - 1.0) > 1e-9:
        raise DomainError("support masses must sum to 1")
    return aggregated_target(spec, x0s, x1s, q, t, x)


def aggregated_target(spec: PathSpec, x0s, x1s, q, t, x) -> np.ndarray:
    """Batch-aggregated target u_t(x | zbar) over m conditions with masses ``q``."""
    x1s = np.asarray(x1s, dtype=np.float64)
    x0s = None if x0s is None else np.asarray(x0s, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x1s.ndim != 2 or x1s.shape[0] < 1:
        raise ShapeError("conditions must be an (m, d) array with m >= 1")
    log_q = _log_masses(q)
    if x.ndim == 1:
        return _mixture_field(spec, x0s, x1s, log_q, np.asarray(t, dtype=np.float64), x)
    n = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    x0b = None if x0s is None else np.broadcast_to(x0s, (n,) + x0s.shape)
    x1b = np.broadcast_to(x1s, (n,) + x1s.shape)
    return _mixture_field(spec, x0b, x1b, np.broadcast_to(log_q, (n, len(log_q))), t, x)


def aggregated_rows(spec: PathSpec, x0c, x1c, log_q, t, x) -> np.ndarray:
    """Per-row aggregation: row i has its own m conditions ``x0c[i]``, ``x1c[i]``."""
    return _mixture_field(spec, x0c, x1c, np.asarray(log_q, dtype=np.float64), t, x)


def conditional_flow_field(
    spec: PathSpec, x0: Optional[np.ndarray], x1: np.ndarray, t_clip: Optional[Tuple[float, float]] = None
) -> Callable[[float, np.ndarray], np.ndarray]:
    """Batched field whose row i follows u_t(. | x0[i], x1[i])."""

    def field(t: float, x: np.ndarray) -> np.ndarray:
        if t_clip is not None:
            t = min(max(t, t_clip[0]), t_clip[1])
        return cond_field(spec, x0, x1, np.full(x.shape[0], t), x)

    return field


def closed_form_map(spec: PathSpec, x0_point, x1, t) -> np.ndarray:
    """phi_t(x) = mu_t + std_t (x - mu_0) / std_0, the flow of cond_field started at ``x0_point``."""
    mu_0, std_0 = mean_std(spec, None, x1, 0.0)
    mu_t, std_t = mean_std(spec, None, x1, t)
    return mu_t + std_t * (np.asarray(x0_point) - mu_0) / std_0
