from __future__ import annotations

import math
from typing import Callable, NamedTuple, Union

import numpy as np
from scipy.special import logsumexp

from ..integrate import IntegratorSettings, as_field, integrate_with_logdet
from ..integrate.ode import Field
from ..net.field import FieldModel
from ..shared.batch import standard_normal_logpdf
from ..shared.errors import DomainError


class PartitionEstimate(NamedTuple):
    log_z: float
    nfe: int
    ess: float


def log_partition_details(
    model: Union[FieldModel, Field],
    log_r: Callable[[np.ndarray], np.ndarray],
    k: int,
    settings: IntegratorSettings,
    d: int,
    rng: np.random.Generator,
    div_h: float = 1e-4,
) -> PartitionEstimate:
    """log (1/K) sum_k R(x1_k) |det dx1/dx0| / N(x0_k; 0, I) for x0_k ~ N(0, I)."""
    if k < 1:
        raise DomainError(f"K must be >= 1, got {k}")
    x0 = rng.standard_normal((k, d))
    x1, log_det, nfe = integrate_with_logdet(as_field(model), x0, 0.0, 1.0, settings, div_h)
    log_w = np.asarray(log_r(x1), dtype=np.float64) - standard_normal_logpdf(x0) + log_det
    log_z = float(logsumexp(log_w) - math.log(k))
    w = np.exp(log_w - logsumexp(log_w))
    return PartitionEstimate(log_z, nfe, float(1.0 / np.sum(w * w)))


def log_partition_estimate(
    model: Union[FieldModel, Field],
    log_r: Callable[[np.ndarray], np.ndarray],
    k: int,
    settings: IntegratorSettings,
    d: int,
    rng: np.random.Generator,
    div_h: float = 1e-4,
) -> float:
    return log_partition_details(model, log_r, k, settings, d, rng, div_h).log_z
