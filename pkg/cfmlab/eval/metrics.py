from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist

from ..coupling import exact_ot_plan
from ..integrate import IntegratorSettings, Record, as_field, integrate
from ..integrate.ode import Field
from ..net.field import FieldModel, forward_batch
from ..paths import PathSpec, marginal_field_oracle
from ..shared.batch import as_points
from ..shared.errors import DomainError
from ..trainer.loop import Sampler, TrainConfig, regression_batch
from ..trainer.timeseries import LeaveOneOutPlan

logger = logging.getLogger(__name__)

# Reference fields are evaluated row-wise: one time per row of x.
Reference = Callable[[np.ndarray, np.ndarray], np.ndarray]

MMD_BANDWIDTH_SQ_2D = 2.0
MMD_BANDWIDTH_SQ_LATENT = 128.0


@dataclass
class MetricReport:
    w2_sq: float
    path_energy: float
    npe: float
    nfe_mean: float
    mmd: Optional[float] = None
    per_time_errors: Optional[List[Tuple[float, float]]] = None
    integrator: str = ""
    n_steps: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "w2_sq": self.w2_sq,
            "pe": self.path_energy,
            "npe": self.npe,
            "nfe_mean": self.nfe_mean,
            "mmd": self.mmd,
            "integrator": self.integrator,
            "n_steps": self.n_steps,
        }


def w2_squared(a, b, a_weights=None, b_weights=None) -> float:
    """Squared 2-Wasserstein distance between two empirical measures."""
    plan = exact_ot_plan(a, b, a_weights, b_weights)
    return max(0.0, plan.cost)


def normalized_path_energy(pe: float, w2_ref: float) -> float:
    if not w2_ref > 0:
        raise DomainError(f"w2_ref must be positive, got {w2_ref}")
    return abs(pe - w2_ref) / w2_ref


def path_energy_and_npe(
    model: Union[FieldModel, Field],
    source,
    w2_ref: float,
    settings: IntegratorSettings,
) -> Tuple[float, float]:
    if not w2_ref > 0:
        raise DomainError(f"w2_ref must be positive, got {w2_ref}")
    traj = integrate(as_field(model), source, 0.0, 1.0, settings, Record(states=False, path_energy=True))
    pe = float(np.mean(traj.path_energy))
    return pe, normalized_path_energy(pe, w2_ref)


def mmd(a, b, bandwidth_sq: float = MMD_BANDWIDTH_SQ_2D) -> float:
    """Biased (V-statistic) MMD^2 under the kernel exp(-|x - y|^2 / (2 bandwidth_sq))."""
    if not bandwidth_sq > 0:
        raise DomainError(f"bandwidth_sq must be positive, got {bandwidth_sq}")
    a = as_points(a)
    b = as_points(b)

    def k(x, y):
        return np.exp(-cdist(x, y, "sqeuclidean") / (2.0 * bandwidth_sq))

    value = k(a, a).mean() + k(b, b).mean() - 2.0 * k(a, b).mean()
    return max(0.0, float(value))


def model_reference(model: FieldModel) -> Reference:
    def ref(t: np.ndarray, x: np.ndarray) -> np.ndarray:
        return forward_batch(model, t, x)

    return ref


def oracle_reference(spec: PathSpec, x0s, x1s, q) -> Reference:
    """Exact marginal field of a finitely supported condition distribution."""

    def ref(t: np.ndarray, x: np.ndarray) -> np.ndarray:
        return marginal_field_oracle(spec, x0s, x1s, q, t, x)

    return ref


def objective_variance_terms(
    config: TrainConfig,
    source_sampler: Sampler,
    target_sampler: Sampler,
    reference: Reference,
    n_samples: int,
    rng: np.random.Generator,
    batch_size: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row |u_t(x|z) - reference(t, x)|^2 and the row masses they average with."""
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    batch_size = batch_size or config.batch_size
    terms, masses = [], []
    drawn = 0
    while drawn < n_samples:
        batch = regression_batch(config, source_sampler(batch_size, rng), target_sampler(batch_size, rng), rng)
        sq = np.sum((batch.u - reference(batch.t, batch.x)) ** 2, axis=1)
        w = np.full(len(sq), 1.0 / len(sq)) if batch.weights is None else batch.weights
        terms.append(sq)
        masses.append(w * len(sq))
        drawn += len(sq)
    sq = np.concatenate(terms)[:n_samples]
    w = np.concatenate(masses)[:n_samples]
    return sq, w / w.sum()


def objective_variance(
    config: TrainConfig,
    source_sampler: Sampler,
    target_sampler: Sampler,
    reference: Reference,
    n_samples: int,
    rng: np.random.Generator,
    batch_size: Optional[int] = None,
) -> float:
    """Monte-Carlo E |u_t(x|z) - u_t(x)|^2 with u_t(x) replaced by ``reference``."""
    sq, w = objective_variance_terms(config, source_sampler, target_sampler, reference, n_samples, rng, batch_size)
    return float(np.sum(sq * w))


def evaluate_model(
    model: Union[FieldModel, Field],
    source,
    target,
    w2_ref: float,
    integrators: Sequence[IntegratorSettings],
    mmd_bandwidth_sq: Optional[float] = None,
) -> List[MetricReport]:
    """One report per integrator: fit to ``target``, path energy and NFE."""
    field = as_field(model)
    reports = []
    for settings in integrators:
        traj = integrate(field, source, 0.0, 1.0, settings, Record(states=False, path_energy=True))
        pe = float(np.mean(traj.path_energy))
        report = MetricReport(
            w2_sq=w2_squared(traj.final, target),
            path_energy=pe,
            npe=normalized_path_energy(pe, w2_ref),
            nfe_mean=float(traj.nfe),
            mmd=None if mmd_bandwidth_sq is None else mmd(traj.final, target, mmd_bandwidth_sq),
            integrator=settings.method,
            n_steps=None if settings.method == "dopri5" else settings.n_steps,
        )
        logger.info("%s: w2_sq %.5g pe %.5g npe %.4f nfe %d", settings.label, report.w2_sq, pe, report.npe, traj.nfe)
        reports.append(report)
    return reports


def _subsample(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if len(points) == k:
        return points
    return points[rng.choice(len(points), size=k, replace=False)]


def leave_one_out_eval(
    model: Union[FieldModel, Field],
    plan: LeaveOneOutPlan,
    settings: IntegratorSettings,
    rng: np.random.Generator,
    n_eval: Optional[int] = None,
) -> float:
    """W2^2 between the pushed-forward previous timepoint and the held-out cloud."""
    k = min(len(plan.eval_source), len(plan.eval_target))
    if n_eval is not None:
        k = min(k, n_eval)
    source = _subsample(plan.eval_source, k, rng)
    target = _subsample(plan.eval_target, k, rng)
    traj = integrate(
        as_field(model), source, plan.eval_t_start, plan.eval_t_end, settings, Record(states=False)
    )
    return w2_squared(traj.final, target)
