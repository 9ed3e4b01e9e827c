from __future__ import annotations

import logging
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np

from ..coupling import CouplingPlan, sample_pairs, sinkhorn_plan
from ..coupling.plans import SINKHORN_MAX_ITERS, SINKHORN_TOL
from ..integrate import IntegratorSettings, Record, as_field, integrate
from ..integrate.ode import Field
from ..net.field import FieldModel
from ..shared.batch import as_points
from ..shared.errors import DomainError
from ..shared.rng import make_rng
from .metrics import w2_squared

logger = logging.getLogger(__name__)

CURVE_TIMEPOINTS = 20
CURVE_SAMPLES = 1000


class BridgeCurve(NamedTuple):
    points: List[Tuple[float, float]]
    mean: float


def sb_ground_truth_sample(
    q0,
    q1,
    sigma: float,
    t: float,
    n: int,
    rng: np.random.Generator,
    max_iters: int = SINKHORN_MAX_ITERS,
    tol: float = SINKHORN_TOL,
) -> np.ndarray:
    """Draws from the time-t marginal of the entropic bridge with epsilon = 2 sigma^2."""
    if not sigma > 0:
        raise DomainError("the bridge needs sigma > 0")
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    plan = sinkhorn_plan(q0, q1, None, None, 2.0 * sigma * sigma, max_iters, tol)
    return _bridge_draw(plan, sigma, t, n, rng)


def _bridge_draw(plan: CouplingPlan, sigma: float, t: float, n: int, rng: np.random.Generator) -> np.ndarray:
    pairs = sample_pairs(plan, n, rng)
    if t == 0.0:
        return pairs.x0
    if t == 1.0:
        return pairs.x1
    mean = t * pairs.x1 + (1.0 - t) * pairs.x0
    return mean + sigma * np.sqrt(t * (1.0 - t)) * rng.standard_normal(mean.shape)


def sb_error_curve(
    model: Union[FieldModel, Field],
    q0,
    q1,
    sigma: float,
    n_timepoints: int = CURVE_TIMEPOINTS,
    n_samples: int = CURVE_SAMPLES,
    settings: IntegratorSettings = IntegratorSettings(),
    rng: Optional[np.random.Generator] = None,
) -> BridgeCurve:
    """W2^2 between the model flow and the ground-truth bridge at each interior grid time, plus its mean."""
    if n_timepoints < 3:
        raise DomainError(f"n_timepoints must be >= 3, got {n_timepoints}")
    if not sigma > 0:
        raise DomainError("the bridge needs sigma > 0")
    if rng is None:
        rng = make_rng(0, "bridge")
    q0 = as_points(q0)
    idx = rng.choice(len(q0), size=n_samples, replace=len(q0) < n_samples)
    grid = tuple(np.linspace(0.0, 1.0, n_timepoints))
    traj = integrate(as_field(model), q0[idx], 0.0, 1.0, settings, Record(times=grid))
    plan = sinkhorn_plan(q0, q1, None, None, 2.0 * sigma * sigma)
    curve = []
    for t, state in zip(grid[1:-1], traj.states[1:-1]):
        truth = _bridge_draw(plan, sigma, float(t), n_samples, rng)
        curve.append((float(t), w2_squared(state, truth)))
    mean = float(np.mean([e for _, e in curve]))
    logger.info("bridge error: mean %.5g over %d times", mean, len(curve))
    return BridgeCurve(curve, mean)
