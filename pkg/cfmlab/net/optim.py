from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from ..shared.errors import ConfigError, NumericError, ShapeError
from .field import FieldModel, Grads


@dataclass
class OptimState:
    """AdamW state (decoupled weight decay, optional global-norm clipping)."""

    step_count: int
    first_moment: Grads
    second_moment: Grads
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-5
    grad_clip_norm: Optional[float] = None


def init_optimizer(
    model: FieldModel,
    lr: float = 1e-3,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 1e-5,
    grad_clip_norm: Optional[float] = None,
) -> OptimState:
    if not (0.0 < betas[0] < 1.0 and 0.0 < betas[1] < 1.0):
        raise ConfigError(f"betas must lie in (0, 1), got {betas}", "betas")
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}", "lr")
    if grad_clip_norm is not None and grad_clip_norm <= 0:
        raise ConfigError("grad_clip_norm must be positive", "grad_clip_norm")
    zeros = lambda: Grads([np.zeros_like(w) for w in model.weights], [np.zeros_like(b) for b in model.biases])
    return OptimState(0, zeros(), zeros(), lr, (float(betas[0]), float(betas[1])), eps, weight_decay, grad_clip_norm)


def global_norm(grads: Grads) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.weights + grads.biases)))


def clip_grads(grads: Grads, max_norm: float) -> Grads:
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return Grads([g * scale for g in grads.weights], [g * scale for g in grads.biases])


def _adamw(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray, state: OptimState, step: int):
    b1, b2 = state.betas
    p = p * (1.0 - state.lr * state.weight_decay)
    m = b1 * m + (1.0 - b1) * g
    v = b2 * v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1**step)
    v_hat = v / (1.0 - b2**step)
    p = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return p, m, v


def optimizer_step(model: FieldModel, state: OptimState, grads: Grads) -> Tuple[FieldModel, OptimState]:
    """One AdamW update; returns new model and state, inputs are left untouched."""
    if len(grads.weights) != len(model.weights):
        raise ShapeError("gradient structure does not match the model")
    for g, p in zip(grads.weights + grads.biases, model.weights + model.biases):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} vs parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient at optimizer step {state.step_count + 1}")
    if state.grad_clip_norm is not None:
        grads = clip_grads(grads, state.grad_clip_norm)

    step = state.step_count + 1
    new_w: List[np.ndarray] = []
    new_b: List[np.ndarray] = []
    m_w, m_b, v_w, v_b = [], [], [], []
    for k in range(len(model.weights)):
        w, mw, vw = _adamw(model.weights[k], grads.weights[k], state.first_moment.weights[k], state.second_moment.weights[k], state, step)
        b, mb, vb = _adamw(model.biases[k], grads.biases[k], state.first_moment.biases[k], state.second_moment.biases[k], state, step)
        new_w.append(w)
        new_b.append(b)
        m_w.append(mw)
        m_b.append(mb)
        v_w.append(vw)
        v_b.append(vb)
    new_model = FieldModel(list(model.layer_dims), new_w, new_b, model.activation)
    new_state = replace(state, step_count=step, first_moment=Grads(m_w, m_b), second_moment=Grads(v_w, v_b))
    return new_model, new_state
