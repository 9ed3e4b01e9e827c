from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..coupling import CouplingPlan, exact_ot_plan, independent_plan, sample_pairs, sinkhorn_plan
from ..net.field import FieldModel, init_model, loss_and_grad, regression_loss
from ..net.optim import OptimState, init_optimizer, optimizer_step
from ..paths import PathSpec, cond_field, sample_xt
from ..paths.gaussian import TRAIN_TIME_INTERVAL, aggregated_rows
from ..shared.batch import AnyBatch, WeightedBatch, split_batch
from ..shared.errors import ConfigError, ConvergenceError, ShapeError, TrainingError
from ..shared.rng import make_rng

logger = logging.getLogger(__name__)

COUPLINGS = ("independent", "exact_ot", "sinkhorn")

# Samplable distributions have no dataset size; an epoch is this many points.
EPOCH_POINTS = 10_000

Sampler = Callable[[int, np.random.Generator], AnyBatch]
Window = Tuple[float, float]


@dataclass(frozen=True)
class TrainConfig:
    path: PathSpec
    coupling: str = "independent"
    epsilon: Optional[float] = None
    batch_size: int = 512
    ot_batch_size: Optional[int] = None
    max_epochs: int = 1000
    patience: int = 3
    val_interval: int = 10
    steps_per_epoch: Optional[int] = None
    lr: float = 1e-3
    weight_decay: float = 1e-5
    grad_clip_norm: Optional[float] = None
    hidden: Tuple[int, ...] = (64, 64, 64)
    seed: int = 0
    aggregation_m: int = 1
    wall_clock_limit_seconds: Optional[float] = 6000.0
    sinkhorn_max_iters: int = 10_000
    sinkhorn_tol: float = 1e-8
    val_size: int = 10_000

    def __post_init__(self) -> None:
        if self.coupling not in COUPLINGS:
            raise ConfigError(f"unknown coupling {self.coupling!r}", "train.coupling")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", "train.batch_size")
        if self.ot_batch_size is not None and self.ot_batch_size < 1:
            raise ConfigError("ot_batch_size must be >= 1", "train.ot_batch_size")
        if not 1 <= self.aggregation_m <= self.batch_size:
            raise ConfigError("aggregation_m must lie in [1, batch_size]", "train.aggregation_m")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0", "train.max_epochs")
        if self.patience < 1 or self.val_interval < 1:
            raise ConfigError("patience and val_interval must be >= 1", "train.patience")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ConfigError("epsilon must be positive", "train.epsilon")
        if self.path.variant == "sbcfm" and self.coupling != "sinkhorn":
            raise ConfigError("sbcfm trains on a sinkhorn coupling", "train.coupling")
        if self.val_size < 1:
            raise ConfigError("val_size must be >= 1", "train.val_size")

    @property
    def resolved_epsilon(self) -> float:
        return self.epsilon if self.epsilon is not None else 2.0 * self.path.sigma**2

    @property
    def coupling_batch(self) -> int:
        return self.ot_batch_size or self.batch_size

    @property
    def epoch_steps(self) -> int:
        return self.steps_per_epoch if self.steps_per_epoch is not None else math.ceil(EPOCH_POINTS / self.batch_size)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "path"}
        out["hidden"] = list(self.hidden)
        out["path"] = self.path.to_dict()
        return out


@dataclass
class TrainState:
    model: FieldModel
    opt: OptimState


@dataclass
class RegressionBatch:
    """Rows (t_i, x_i, u_i) with optional row weights for the squared-error objective."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    weights: Optional[np.ndarray] = None


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float
    elapsed_s: float


@dataclass
class History:
    rows: List[HistoryRow] = field(default_factory=list)
    steps_failed: int = 0
    stopped: str = "max_epochs"
    wall_clock_s: float = 0.0

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)


@dataclass
class Leg:
    """One source -> target training problem on the time window ``window``."""

    source_sampler: Sampler
    target_sampler: Sampler
    val_source: AnyBatch
    val_target: AnyBatch
    window: Window = (0.0, 1.0)


def build_plan(config: TrainConfig, x0, x1, a=None, b=None) -> CouplingPlan:
    if config.coupling == "exact_ot":
        return exact_ot_plan(x0, x1, a, b)
    if config.coupling == "sinkhorn":
        return sinkhorn_plan(
            x0, x1, a, b, config.resolved_epsilon, config.sinkhorn_max_iters, config.sinkhorn_tol
        )
    return independent_plan(x0, x1, a, b)


def sample_times(spec: PathSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = TRAIN_TIME_INTERVAL[spec.variant]
    return lo + (hi - lo) * rng.random(n)


def _normalized(w: np.ndarray) -> np.ndarray:
    return w / w.sum()


def energy_pair_weights(a: Optional[np.ndarray], b: Optional[np.ndarray], n: int) -> np.ndarray:
    """Row weights for aligned pairs (x0_i, x1_i): proportional to a_i * b_i."""
    w = np.ones(n)
    if a is not None:
        w = w * a
    if b is not None:
        w = w * b
    total = w.sum()
    if not total > 0:
        raise TrainingError("pair weights vanish on the whole batch")
    return w / total


def _pairs(config: TrainConfig, source: AnyBatch, target: AnyBatch, rng: np.random.Generator):
    x1, b = split_batch(target)
    spec = config.path
    if spec.needs_source or config.coupling != "independent":
        x0, a = split_batch(source)
        if x0.shape[1] != x1.shape[1]:
            raise ShapeError(f"source dimension {x0.shape[1]} vs target {x1.shape[1]}")
    else:
        x0, a = x1, None

    if config.coupling == "independent":
        if a is None and b is None:
            pairs = sample_pairs(independent_plan(x0, x1), len(x1), rng)
            return pairs.x0, pairs.x1, None
        if len(x0) != len(x1):
            raise ShapeError("weighted batches are paired row by row and need equal sizes")
        return x0, x1, energy_pair_weights(a, b, len(x1))

    # minibatch OT: solve on chunks of coupling_batch rows
    chunk = config.coupling_batch
    out0, out1 = [], []
    n = min(len(x0), len(x1))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        ca = None if a is None else _normalized(a[start:stop])
        cb = None if b is None else _normalized(b[start:stop])
        plan = build_plan(config, x0[start:stop], x1[start:stop], ca, cb)
        pairs = sample_pairs(plan, stop - start, rng)
        out0.append(pairs.x0)
        out1.append(pairs.x1)
    return np.vstack(out0), np.vstack(out1), None


def regression_batch(
    config: TrainConfig,
    source: AnyBatch,
    target: AnyBatch,
    rng: np.random.Generator,
    window: Window = (0.0, 1.0),
) -> RegressionBatch:
    """Couple the minibatch, draw (t, x) along the path and compute the regression targets."""
    spec = config.path
    x0, x1, weights = _pairs(config, source, target, rng)
    n = len(x1)
    t = sample_times(spec, n, rng)
    x0_or_none = x0 if spec.needs_source else None
    x = sample_xt(spec, x0_or_none, x1, t, rng)
    m = config.aggregation_m
    if m == 1 or n == 1:
        u = cond_field(spec, x0_or_none, x1, t, x)
    else:
        m = min(m, n)
        idx = (np.arange(n)[:, None] + np.arange(m)[None, :]) % n
        log_q = np.zeros((n, m)) if weights is None else np.log(weights)[idx]
        u = aggregated_rows(spec, None if x0_or_none is None else x0[idx], x1[idx], log_q, t, x)
    w0, w1 = window
    span = w1 - w0
    return RegressionBatch(w0 + span * t, x, u / span, weights)


def new_state(config: TrainConfig, d: int) -> TrainState:
    model = init_model(d, config.hidden, config.seed)
    opt = init_optimizer(model, lr=config.lr, weight_decay=config.weight_decay, grad_clip_norm=config.grad_clip_norm)
    return TrainState(model, opt)


def train_step(
    state: TrainState,
    config: TrainConfig,
    source_batch: AnyBatch,
    target_batch: AnyBatch,
    rng: np.random.Generator,
    window: Window = (0.0, 1.0),
) -> float:
    """One CFM update on ``state``; returns the loss before the update."""
    batch = regression_batch(config, source_batch, target_batch, rng, window)
    loss, grads = loss_and_grad(state.model, batch.t, batch.x, batch.u, batch.weights)
    state.model, state.opt = optimizer_step(state.model, state.opt, grads)
    return loss


def _validation_batches(config: TrainConfig, legs: Sequence[Leg]) -> List[RegressionBatch]:
    rng = make_rng(config.seed, "validation")
    out = []
    for leg in legs:
        x0, a = split_batch(leg.val_source)
        x1, b = split_batch(leg.val_target)
        n = min(len(x0), len(x1), config.val_size)
        for start in range(0, n, config.batch_size):
            stop = min(start + config.batch_size, n)
            src = _slice(leg.val_source, start, stop)
            tgt = _slice(leg.val_target, start, stop)
            try:
                out.append(regression_batch(config, src, tgt, rng, leg.window))
            except ConvergenceError as exc:
                logger.warning("validation chunk dropped: %s", exc)
    if not out:
        raise TrainingError("no usable validation batch")
    return out


def _slice(batch: AnyBatch, start: int, stop: int) -> AnyBatch:
    if isinstance(batch, WeightedBatch):
        return WeightedBatch(batch.points[start:stop], _normalized(batch.weights[start:stop]))
    return batch[start:stop]


def validation_loss(model: FieldModel, batches: Sequence[RegressionBatch]) -> float:
    total = sum(regression_loss(model, b.t, b.x, b.u, b.weights) * len(b.x) for b in batches)
    return float(total / sum(len(b.x) for b in batches))


def _infer_dim(legs: Sequence[Leg]) -> int:
    x1, _ = split_batch(legs[0].val_target)
    return x1.shape[1]


def train_legs(
    config: TrainConfig,
    legs: Sequence[Leg],
    clock: Callable[[], float] = time.perf_counter,
) -> Tuple[FieldModel, History]:
    """Train one field on every leg (cycled step by step) with validation early stopping.

    Returns the best-validation model and the per-check history.
    """
    if not legs:
        raise ConfigError("at least one training leg is required", "legs")
    state = new_state(config, _infer_dim(legs))
    history = History()
    if config.max_epochs == 0:
        return state.model, history

    rng = make_rng(config.seed, "train")
    val_batches = _validation_batches(config, legs)
    best_model = state.model.copy()
    best_val = math.inf
    bad_checks = 0
    since_check: List[float] = []
    start = clock()
    step_no = 0

    def check(epoch: int) -> bool:
        nonlocal best_model, best_val, bad_checks, since_check
        val = validation_loss(state.model, val_batches)
        train_loss = float(np.mean(since_check)) if since_check else math.nan
        elapsed = clock() - start
        history.rows.append(HistoryRow(epoch, train_loss, val, elapsed))
        logger.info("epoch %d: train %.6g val %.6g (%.1fs)", epoch, train_loss, val, elapsed)
        since_check = []
        if val < best_val:
            best_val, best_model, bad_checks = val, state.model.copy(), 0
            return False
        bad_checks += 1
        return bad_checks >= config.patience

    for epoch in range(1, config.max_epochs + 1):
        ok = 0
        for _ in range(config.epoch_steps):
            leg = legs[step_no % len(legs)]
            step_no += 1
            source = leg.source_sampler(config.batch_size, rng)
            target = leg.target_sampler(config.batch_size, rng)
            try:
                since_check.append(train_step(state, config, source, target, rng, leg.window))
                ok += 1
            except ConvergenceError as exc:
                history.steps_failed += 1
                logger.warning("step %d failed: %s", step_no, exc)
        if ok == 0 and config.epoch_steps > 0:
            raise TrainingError(f"every step of epoch {epoch} failed")

        checked = False
        if epoch % config.val_interval == 0 or epoch == config.max_epochs:
            checked = True
            if check(epoch):
                history.stopped = "early_stopping"
                break
        limit = config.wall_clock_limit_seconds
        if limit is not None and clock() - start > limit:
            if not checked:
                check(epoch)
            history.stopped = "wall_clock"
            logger.warning("wall-clock limit of %.0fs reached at epoch %d", limit, epoch)
            break

    history.wall_clock_s = clock() - start
    return best_model, history


def train(
    config: TrainConfig,
    source_sampler: Sampler,
    target_sampler: Sampler,
    val_source: AnyBatch,
    val_target: AnyBatch,
    clock: Callable[[], float] = time.perf_counter,
) -> Tuple[FieldModel, History]:
    return train_legs(config, [Leg(source_sampler, target_sampler, val_source, val_target)], clock)


def resampler(points: np.ndarray) -> Sampler:
    """Sampler drawing rows of a fixed point cloud with replacement."""
    points = np.asarray(points, dtype=np.float64)

    def draw(n: int, rng: np.random.Generator) -> np.ndarray:
        return points[rng.integers(0, len(points), size=n)]

    return draw
