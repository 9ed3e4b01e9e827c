from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from ..shared.batch import as_points, uniform_weights
from ..shared.errors import ConvergenceError, DomainError, NumericError, ShapeError

logger = logging.getLogger(__name__)

KINDS = ("independent", "exact_ot", "entropic_ot")

SINKHORN_TOL = 1e-8
SINKHORN_MAX_ITERS = 10_000


@dataclass
class CouplingPlan:
    """Joint distribution over (source index, target index) pairs.

    ``masses`` is None for the independent kind (implicit product a b^T).
    ``assignment[i]`` is the matched target of source i when the plan is a
    permutation.
    """

    kind: str
    masses: Optional[np.ndarray]
    source_points: np.ndarray
    target_points: np.ndarray
    source_weights: np.ndarray
    target_weights: np.ndarray
    cost: float
    epsilon: Optional[float] = None
    assignment: Optional[np.ndarray] = None

    def dense(self) -> np.ndarray:
        if self.masses is None:
            return np.outer(self.source_weights, self.target_weights)
        return self.masses

    def marginal_violation(self) -> float:
        p = self.dense()
        return float(
            max(
                np.max(np.abs(p.sum(axis=1) - self.source_weights)),
                np.max(np.abs(p.sum(axis=0) - self.target_weights)),
            )
        )


class PairSample(NamedTuple):
    x0: np.ndarray
    x1: np.ndarray
    source_index: np.ndarray
    target_index: np.ndarray


def squared_cost(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    return cdist(x0, x1, "sqeuclidean")


def _prepare(x0, x1, a, b):
    x0 = as_points(x0)
    x1 = as_points(x1)
    if x0.shape[0] == 0 or x1.shape[0] == 0:
        raise DomainError("empty batch")
    if x0.shape[1] != x1.shape[1]:
        raise ShapeError(f"dimension mismatch: {x0.shape[1]} vs {x1.shape[1]}")
    a = uniform_weights(x0.shape[0]) if a is None else np.asarray(a, dtype=np.float64).reshape(-1)
    b = uniform_weights(x1.shape[0]) if b is None else np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape[0] != x0.shape[0] or b.shape[0] != x1.shape[0]:
        raise ShapeError("weight vectors must match batch sizes")
    for name, w in (("a", a), ("b", b)):
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DomainError(f"{name} must be nonnegative and sum to 1")
    return x0, x1, a, b


def _is_uniform(w: np.ndarray) -> bool:
    return bool(np.all(w == w[0]))


def independent_plan(x0, x1, a=None, b=None) -> CouplingPlan:
    x0, x1, a, b = _prepare(x0, x1, a, b)
    cost = float(a @ squared_cost(x0, x1) @ b)
    return CouplingPlan("independent", None, x0, x1, a, b, cost)


def _network_lp(cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, m = cost.shape
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    a_eq = sparse.vstack([rows, cols]).tocsr()
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericError(f"transport LP failed: {res.message}")
    return np.maximum(res.x.reshape(n, m), 0.0)


def exact_ot_plan(x0, x1, a=None, b=None) -> CouplingPlan:
    """Minimum squared-Euclidean transport plan between two weighted point sets.

    Uniform equal-size batches are solved as an assignment problem and give a
    permutation plan; anything else goes through the transportation LP.
    """
    x0, x1, a, b = _prepare(x0, x1, a, b)
    cost_matrix = squared_cost(x0, x1)
    n, m = cost_matrix.shape
    if n == m and _is_uniform(a) and _is_uniform(b):
        rows, cols = linear_sum_assignment(cost_matrix)
        assignment = np.empty(n, dtype=np.int64)
        assignment[rows] = cols
        masses = np.zeros((n, m))
        masses[rows, cols] = 1.0 / n
        cost = float(cost_matrix[rows, cols].sum() / n)
        return CouplingPlan("exact_ot", masses, x0, x1, a, b, cost, assignment=assignment)
    masses = _network_lp(cost_matrix, a, b)
    return CouplingPlan("exact_ot", masses, x0, x1, a, b, float(np.sum(masses * cost_matrix)))


def sinkhorn_plan(
    x0,
    x1,
    a=None,
    b=None,
    epsilon: float = 0.1,
    max_iters: int = SINKHORN_MAX_ITERS,
    tol: float = SINKHORN_TOL,
) -> CouplingPlan:
    """Entropic OT plan (regularization ``epsilon``) by log-domain Sinkhorn iterations."""
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    x0, x1, a, b = _prepare(x0, x1, a, b)
    cost_matrix = squared_cost(x0, x1)
    log_k = -cost_matrix / epsilon
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
        log_b = np.log(b)

    f = np.zeros_like(a)
    g = np.zeros_like(b)
    violation = np.inf
    for it in range(1, max_iters + 1):
        f = log_a - logsumexp(log_k + g[None, :], axis=1)
        g = log_b - logsumexp(log_k + f[:, None], axis=0)
        # columns are exact after the g update, rows carry the residual
        log_p = log_k + f[:, None] + g[None, :]
        violation = float(np.max(np.abs(np.exp(logsumexp(log_p, axis=1)) - a)))
        if violation <= tol:
            logger.debug("sinkhorn converged in %d iterations (eps=%g)", it, epsilon)
            break
    else:
        raise ConvergenceError(f"sinkhorn did not converge in {max_iters} iterations (eps={epsilon:g})", violation)

    masses = np.exp(log_k + f[:, None] + g[None, :])
    return CouplingPlan("entropic_ot", masses, x0, x1, a, b, float(np.sum(masses * cost_matrix)), epsilon=epsilon)


def sample_pairs(plan: CouplingPlan, count: int, rng: np.random.Generator) -> PairSample:
    """Draw ``count`` i.i.d. (x0, x1) pairs from the plan's joint distribution."""
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    if plan.masses is None:
        i = rng.choice(len(plan.source_weights), size=count, p=plan.source_weights)
        j = rng.choice(len(plan.target_weights), size=count, p=plan.target_weights)
    else:
        flat = plan.masses.ravel()
        flat = flat / flat.sum()
        idx = rng.choice(flat.shape[0], size=count, p=flat)
        i, j = np.divmod(idx, plan.masses.shape[1])
    return PairSample(plan.source_points[i], plan.target_points[j], i, j)
