from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..shared.errors import ConfigError, DomainError, NumericError, ShapeError
from ..shared.rng import make_rng

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805

ACTIVATIONS = ("selu",)


def selu(z: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(z > 0, z, SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def selu_grad(z: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(z > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(z, 0.0)))


@dataclass
class FieldModel:
    """Dense time-conditioned vector field v(t, x).

    The input row is ``[x, t]`` (width d + 1); hidden layers use SELU and the
    output layer is linear with width d. ``weights[k]`` has shape
    ``(layer_dims[k], layer_dims[k + 1])``.
    """

    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "selu"

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", "activation")
        if len(self.layer_dims) < 2 or len(self.weights) != len(self.layer_dims) - 1:
            raise ShapeError("layer_dims and weights disagree")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[k], self.layer_dims[k + 1]) or b.shape != (self.layer_dims[k + 1],):
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape} do not match layer_dims")
        if self.layer_dims[0] != self.layer_dims[-1] + 1:
            raise ShapeError("input width must be output width + 1 (x and t)")

    @property
    def dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "FieldModel":
        return FieldModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


class Grads(NamedTuple):
    weights: List[np.ndarray]
    biases: List[np.ndarray]


def init_model(d: int, hidden: Sequence[int], seed: int) -> FieldModel:
    if d < 1:
        raise ConfigError(f"dimension must be >= 1, got {d}", "d")
    if not hidden:
        raise ConfigError("at least one hidden layer is required", "hidden")
    if any(int(h) <= 0 for h in hidden):
        raise ConfigError(f"hidden widths must be positive, got {list(hidden)}", "hidden")
    dims = [d + 1] + [int(h) for h in hidden] + [d]
    rng = make_rng(seed, "init")
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    biases = [np.zeros(n) for n in dims[1:]]
    return FieldModel(dims, weights, biases)


def zero_model(d: int, hidden: Sequence[int]) -> FieldModel:
    dims = [d + 1] + [int(h) for h in hidden] + [d]
    return FieldModel(
        dims,
        [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
        [np.zeros(n) for n in dims[1:]],
    )


def _inputs(model: FieldModel, t, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ShapeError(f"expected rows of dimension {model.dim}, got shape {x.shape}")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (x.shape[0], 1))
    return np.hstack([x, t])


def _forward_trace(model: FieldModel, h: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    # activations[k] is the input of layer k; pre[k] its pre-activation
    activations = [h]
    pre = []
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if k == last else selu(z)
        if k != last:
            activations.append(h)
    return h, activations, pre


def forward_batch(model: FieldModel, t, x: np.ndarray) -> np.ndarray:
    """Row-wise v(t_i, x_i); ``t`` is a scalar or one time per row."""
    out, _, _ = _forward_trace(model, _inputs(model, t, x))
    return out


def forward(model: FieldModel, t: float, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a single {model.dim}-vector, got shape {x.shape}")
    return forward_batch(model, t, x.reshape(1, -1))[0]


def _row_weights(n: int, weights: Optional[np.ndarray]) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != n:
        raise ShapeError(f"{w.shape[0]} weights for {n} rows")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
        raise DomainError("row weights must be nonnegative and sum to 1")
    return w


def regression_loss(model: FieldModel, t, x: np.ndarray, targets: np.ndarray, weights: Optional[np.ndarray] = None) -> float:
    pred = forward_batch(model, t, x)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != pred.shape:
        raise ShapeError(f"targets {targets.shape} vs predictions {pred.shape}")
    w = _row_weights(pred.shape[0], weights)
    return float(np.sum(w * np.sum((pred - targets) ** 2, axis=1)))


def loss_and_grad(
    model: FieldModel,
    t,
    x: np.ndarray,
    targets: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> Tuple[float, Grads]:
    """Weighted squared error sum_i w_i |v(t_i, x_i) - u_i|^2 and its exact gradient."""
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or targets.shape != x.shape:
        raise ShapeError(f"inputs {x.shape} and targets {targets.shape} must have equal shapes")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(targets)) and np.all(np.isfinite(t))):
        raise NumericError("non-finite regression input")
    h = _inputs(model, t, x)
    w = _row_weights(x.shape[0], weights)

    out, activations, pre = _forward_trace(model, h)
    resid = out - targets
    loss = float(np.sum(w * np.sum(resid * resid, axis=1)))

    n_layers = len(model.weights)
    g_w: List[np.ndarray] = [np.empty(0)] * n_layers
    g_b: List[np.ndarray] = [np.empty(0)] * n_layers
    delta = 2.0 * w[:, None] * resid
    for k in range(n_layers - 1, -1, -1):
        g_w[k] = activations[k].T @ delta
        g_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k].T) * selu_grad(pre[k - 1])
    return loss, Grads(g_w, g_b)
