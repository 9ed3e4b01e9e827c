from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from ..net.field import FieldModel
from ..shared.errors import DomainError
from ..shared.rng import make_rng
from .loop import History, Leg, TrainConfig, resampler, train_legs


@dataclass
class LegSpec:
    source: np.ndarray
    target: np.ndarray
    t_start: float
    t_end: float


@dataclass
class LeaveOneOutPlan:
    """Training legs over the retained timepoints plus the held-out evaluation leg."""

    legs: List[LegSpec]
    eval_source: np.ndarray
    eval_target: np.ndarray
    eval_t_start: float
    eval_t_end: float
    global_times: List[float]
    holdout_index: int


def rescale_labels(labels: Sequence[float]) -> List[float]:
    lo, hi = float(labels[0]), float(labels[-1])
    if not hi > lo:
        raise DomainError("time labels must span a positive interval")
    return [(float(lab) - lo) / (hi - lo) for lab in labels]


def leave_one_out_plan(timepoints: Sequence[Tuple[float, np.ndarray]], holdout_index: int) -> LeaveOneOutPlan:
    """Consecutive retained timepoints become legs; the leg across the gap skips the holdout."""
    if len(timepoints) < 3:
        raise DomainError(f"need at least 3 timepoints, got {len(timepoints)}")
    if not 0 < holdout_index < len(timepoints) - 1:
        raise DomainError(f"holdout index {holdout_index} must be interior")
    labels = [lab for lab, _ in timepoints]
    if any(b <= a for a, b in zip(labels, labels[1:])):
        raise DomainError("time labels must be strictly increasing")
    times = rescale_labels(labels)
    kept = [i for i in range(len(timepoints)) if i != holdout_index]
    legs = [
        LegSpec(timepoints[i][1], timepoints[j][1], times[i], times[j]) for i, j in zip(kept, kept[1:])
    ]
    return LeaveOneOutPlan(
        legs,
        eval_source=timepoints[holdout_index - 1][1],
        eval_target=timepoints[holdout_index][1],
        eval_t_start=times[holdout_index - 1],
        eval_t_end=times[holdout_index],
        global_times=times,
        holdout_index=holdout_index,
    )


def train_interpolation(
    config: TrainConfig,
    plan: LeaveOneOutPlan,
    clock: Callable[[], float] = time.perf_counter,
) -> Tuple[FieldModel, History]:
    """Train one field over the full time scale on every leg of ``plan``."""
    legs = []
    for k, spec in enumerate(plan.legs):
        rng = make_rng(config.seed, "interpolation", k)
        n = config.val_size
        val_source = spec.source[rng.integers(0, len(spec.source), size=n)]
        val_target = spec.target[rng.integers(0, len(spec.target), size=n)]
        legs.append(
            Leg(resampler(spec.source), resampler(spec.target), val_source, val_target, (spec.t_start, spec.t_end))
        )
    return train_legs(config, legs, clock)
