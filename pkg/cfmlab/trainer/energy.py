from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from ..net.field import FieldModel, regression_loss
from ..shared.batch import AnyBatch, WeightedBatch, standard_normal_logpdf
from ..shared.errors import (
    ConfigError,
    ConvergenceError,
    DegenerateWeightsError,
    InitializationError,
    TrainingError,
)
from ..shared.rng import make_rng
from .loop import History, HistoryRow, TrainConfig, new_state, regression_batch, train_step

logger = logging.getLogger(__name__)

LogDensity = Callable[[np.ndarray], np.ndarray]
GradLogDensity = Callable[[np.ndarray], np.ndarray]

PROPOSALS = ("gaussian", "uniform")
TARGET_METHODS = ("rwis", "mcmc")
EBM_GRAD_CLIP = 1.0


def _proposal_draw(proposal: str, d: int, n: int, rng: np.random.Generator, bound: float):
    if proposal == "gaussian":
        x = rng.standard_normal((n, d))
        return x, standard_normal_logpdf(x)
    if proposal == "uniform":
        x = rng.uniform(-bound, bound, size=(n, d))
        return x, np.full(n, -d * math.log(2.0 * bound))
    raise ConfigError(f"unknown proposal {proposal!r}", "ebm.proposal")


def rwis_batch(
    log_density: LogDensity,
    d: int,
    batch_size: int,
    rng: np.random.Generator,
    proposal: str = "gaussian",
    bound: float = 4.0,
) -> WeightedBatch:
    """Proposal samples weighted by R(x) / proposal(x), self-normalized over the batch."""
    x, log_prop = _proposal_draw(proposal, d, batch_size, rng, bound)
    log_r = np.asarray(log_density(x), dtype=np.float64)
    log_w = np.where(np.isnan(log_r), -np.inf, log_r - log_prop)
    if not np.any(np.isfinite(log_w)) or np.any(log_w == np.inf):
        raise DegenerateWeightsError("importance weights underflow or overflow on the whole batch")
    w = np.exp(log_w - logsumexp(log_w))
    w = w / w.sum()
    return WeightedBatch(x, w)


def effective_sample_size(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=np.float64)
    return float(1.0 / np.sum(w * w))


def linear_schedule(start: float, stop: float, n_steps: int) -> np.ndarray:
    """Step sizes decaying linearly from ``start`` to ``stop`` over ``n_steps`` steps."""
    if n_steps < 1:
        return np.zeros(0)
    return np.linspace(start, stop, n_steps)


def finite_difference_grad(log_density: LogDensity, h: float = 1e-5) -> GradLogDensity:
    def grad(x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        for i in range(x.shape[1]):
            step = np.zeros(x.shape[1])
            step[i] = h
            out[:, i] = (log_density(x + step) - log_density(x - step)) / (2.0 * h)
        return out

    return grad


class MalaResult(NamedTuple):
    samples: np.ndarray
    acceptance_rate: float


def mala_run(
    log_density: LogDensity,
    n_samples: int,
    n_steps: int,
    step_schedule: Union[Sequence[float], Callable[[int], float]],
    rng: np.random.Generator,
    d: Optional[int] = None,
    grad_log_density: Optional[GradLogDensity] = None,
    init: Optional[np.ndarray] = None,
) -> MalaResult:
    """Independent MALA chains: y = x + eps grad log p(x) + sqrt(2 eps) xi, then accept/reject.

    Chains start from ``init`` or from N(0, I) in ``d`` dimensions. Steps with
    eps = 0 leave the chains untouched and do not count towards the acceptance rate.
    """
    if init is None:
        if d is None:
            raise ConfigError("mala_run needs d or init", "d")
        x = rng.standard_normal((n_samples, d))
    else:
        x = np.array(init, dtype=np.float64)
    grad = grad_log_density or finite_difference_grad(log_density)
    logp = np.asarray(log_density(x), dtype=np.float64)
    if not np.all(np.isfinite(logp)):
        raise InitializationError("log density is not finite at the chain initialization")
    g = grad(x)
    schedule = step_schedule if callable(step_schedule) else (lambda k, s=step_schedule: s[k])

    accepted = 0
    proposed = 0
    for k in range(n_steps):
        eps = float(schedule(k))
        if eps <= 0:
            continue
        y = x + eps * g + math.sqrt(2.0 * eps) * rng.standard_normal(x.shape)
        logp_y = np.asarray(log_density(y), dtype=np.float64)
        g_y = grad(y)
        fwd = np.sum((y - x - eps * g) ** 2, axis=1) / (4.0 * eps)
        bwd = np.sum((x - y - eps * g_y) ** 2, axis=1) / (4.0 * eps)
        with np.errstate(invalid="ignore"):
            log_alpha = logp_y - logp + fwd - bwd
        accept = np.log(rng.random(len(x))) < np.where(np.isfinite(log_alpha), log_alpha, -np.inf)
        x = np.where(accept[:, None], y, x)
        logp = np.where(accept, logp_y, logp)
        g = np.where(accept[:, None], g_y, g)
        accepted += int(accept.sum())
        proposed += len(accept)
    rate = accepted / proposed if proposed else 0.0
    logger.debug("mala: %d steps, acceptance %.3f", n_steps, rate)
    return MalaResult(x, rate)


def mala_sample(
    log_density: LogDensity,
    n_samples: int,
    n_steps: int,
    step_schedule: Union[Sequence[float], Callable[[int], float]],
    rng: np.random.Generator,
    d: Optional[int] = None,
    grad_log_density: Optional[GradLogDensity] = None,
    init: Optional[np.ndarray] = None,
) -> np.ndarray:
    return mala_run(log_density, n_samples, n_steps, step_schedule, rng, d, grad_log_density, init).samples


@dataclass(frozen=True)
class EbmConfig:
    d: int = 10
    method: str = "rwis"
    proposal: str = "gaussian"
    proposal_bound: float = 4.0
    n_batches: int = 1500
    mcmc_samples: int = 15_000
    mala_steps: int = 1000
    mala_step_start: float = 0.1
    mala_step_stop: float = 0.0
    log_every: int = 100
    n_partition: int = 6000

    def __post_init__(self) -> None:
        if self.method not in TARGET_METHODS:
            raise ConfigError(f"unknown target method {self.method!r}", "ebm.method")
        if self.proposal not in PROPOSALS:
            raise ConfigError(f"unknown proposal {self.proposal!r}", "ebm.proposal")
        if self.d < 1 or self.n_batches < 0 or self.mcmc_samples < 1 or self.log_every < 1:
            raise ConfigError("ebm sizes must be positive", "ebm")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class _PoolCursor:
    """Walks a fixed sample pool in reshuffled passes."""

    def __init__(self, pool: np.ndarray, rng: np.random.Generator) -> None:
        self.pool = pool
        self.rng = rng
        self.order = rng.permutation(len(pool))
        self.pos = 0

    def take(self, n: int) -> np.ndarray:
        out = []
        while n > 0:
            if self.pos == len(self.order):
                self.order = self.rng.permutation(len(self.pool))
                self.pos = 0
            k = min(n, len(self.order) - self.pos)
            out.append(self.pool[self.order[self.pos : self.pos + k]])
            self.pos += k
            n -= k
        return np.vstack(out)


def train_energy(
    config: TrainConfig,
    ebm: EbmConfig,
    log_density: LogDensity,
    grad_log_density: Optional[GradLogDensity] = None,
    clock: Callable[[], float] = time.perf_counter,
) -> Tuple[FieldModel, History]:
    """Fit a flow from N(0, I) to an unnormalized density for a fixed budget of batches.

    Targets are RWIS-weighted proposal batches or a MALA sample pool drawn once.
    """
    if config.grad_clip_norm is None:
        config = replace(config, grad_clip_norm=EBM_GRAD_CLIP)
    rng = make_rng(config.seed, "ebm")
    state = new_state(config, ebm.d)
    history = History()
    start = clock()

    if ebm.method == "mcmc":
        schedule = linear_schedule(ebm.mala_step_start, ebm.mala_step_stop, ebm.mala_steps)
        result = mala_run(
            log_density, ebm.mcmc_samples, ebm.mala_steps, schedule, make_rng(config.seed, "mala"), ebm.d, grad_log_density
        )
        logger.info("mala pool of %d samples, acceptance %.3f", ebm.mcmc_samples, result.acceptance_rate)
        cursor = _PoolCursor(result.samples, rng)

        def draw_target(n: int, gen: np.random.Generator) -> AnyBatch:
            return cursor.take(n)

        val_target: AnyBatch = result.samples[make_rng(config.seed, "validation").permutation(len(result.samples))[: config.batch_size]]
    else:

        def draw_target(n: int, gen: np.random.Generator) -> AnyBatch:
            return rwis_batch(log_density, ebm.d, n, gen, ebm.proposal, ebm.proposal_bound)

        val_target = draw_target(config.batch_size, make_rng(config.seed, "validation"))

    val_rng = make_rng(config.seed, "validation", "pairs")
    val_source = val_rng.standard_normal((len(val_target), ebm.d))
    val_batch = regression_batch(config, val_source, val_target, val_rng)

    losses: List[float] = []

    def check(step: int) -> None:
        nonlocal losses
        val = regression_loss(state.model, val_batch.t, val_batch.x, val_batch.u, val_batch.weights)
        train_loss = float(np.mean(losses)) if losses else math.nan
        history.rows.append(HistoryRow(step, train_loss, val, clock() - start))
        logger.info("batch %d: train %.6g val %.6g", step, train_loss, val)
        losses = []

    for step in range(1, ebm.n_batches + 1):
        source = rng.standard_normal((config.batch_size, ebm.d))
        try:
            target = draw_target(config.batch_size, rng)
            losses.append(train_step(state, config, source, target, rng))
        except (ConvergenceError, DegenerateWeightsError) as exc:
            history.steps_failed += 1
            logger.warning("batch %d skipped: %s", step, exc)
        checked = step % ebm.log_every == 0 or step == ebm.n_batches
        if checked:
            check(step)
        limit = config.wall_clock_limit_seconds
        if limit is not None and clock() - start > limit:
            if not checked:
                check(step)
            history.stopped = "wall_clock"
            logger.warning("wall-clock limit of %.0fs reached at batch %d", limit, step)
            break
    if ebm.n_batches and history.steps_failed == ebm.n_batches:
        raise TrainingError("every energy-based training batch failed")
    history.wall_clock_s = clock() - start
    return state.model, history
