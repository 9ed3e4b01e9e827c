from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..net.field import FieldModel, forward_batch
from ..shared.batch import as_points
from ..shared.errors import ConfigError, DivergenceError, DomainError, StiffnessError

logger = logging.getLogger(__name__)

Field = Callable[[float, np.ndarray], np.ndarray]

METHODS = ("euler", "rk4", "dopri5")

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
MIN_STEP = 1e-12


@dataclass(frozen=True)
class IntegratorSettings:
    method: str = "rk4"
    n_steps: int = 100
    atol: float = 1e-5
    rtol: float = 1e-5

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown integrator {self.method!r}", "eval.integrators")
        if self.method != "dopri5" and self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1", "eval.n_steps")
        if self.method == "dopri5" and (self.atol <= 0 or self.rtol <= 0):
            raise ConfigError("atol and rtol must be positive", "eval.atol")

    @property
    def label(self) -> str:
        return self.method if self.method == "dopri5" else f"{self.method}{self.n_steps}"


@dataclass(frozen=True)
class Record:
    """What an integration keeps besides the end state.

    ``times`` requests states on a fixed grid (linear interpolation between
    steps); otherwise every step is kept when ``states`` is set.
    """

    states: bool = True
    path_energy: bool = False
    log_det: bool = False
    times: Optional[Tuple[float, ...]] = None
    div_h: float = 1e-4


@dataclass
class Trajectory:
    times: List[float]
    states: List[np.ndarray]
    nfe: int
    path_energy: Optional[np.ndarray] = None
    log_det: Optional[np.ndarray] = None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


class _Counted:
    def __init__(self, fn: Field) -> None:
        self.fn = fn
        self.calls = 0

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        self.calls += 1
        return self.fn(t, x)


def model_field(model: FieldModel) -> Field:
    """Adapt a FieldModel to the batched ``field(t, X)`` signature."""

    def fn(t: float, x: np.ndarray) -> np.ndarray:
        return forward_batch(model, t, x)

    return fn


def as_field(model: Union[FieldModel, Field]) -> Field:
    return model_field(model) if isinstance(model, FieldModel) else model


def divergence(field_fn: Field, t: float, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference divergence of ``field_fn`` at ``x`` (a d-vector or an n x d batch)."""
    if h <= 0:
        raise DomainError(f"h must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x.reshape(1, -1) if single else x
    div = np.zeros(xb.shape[0])
    for i in range(xb.shape[1]):
        step = np.zeros(xb.shape[1])
        step[i] = h
        div += (field_fn(t, xb + step)[:, i] - field_fn(t, xb - step)[:, i]) / (2.0 * h)
    return float(div[0]) if single else div


def _augmented(fn: _Counted, d: int, record: Record) -> Callable[[float, np.ndarray], np.ndarray]:
    # state columns: x (d), then path energy, then log-det when requested;
    # each divergence costs 2d counted field calls
    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        x = y[:, :d]
        v = fn(t, x)
        parts = [v]
        if record.path_energy:
            parts.append(np.sum(v * v, axis=1, keepdims=True))
        if record.log_det:
            parts.append(divergence(fn, t, x, record.div_h)[:, None])
        return np.hstack(parts) if len(parts) > 1 else v

    return rhs


def _check_finite(y: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(y)):
        raise DivergenceError("non-finite state", t)


def _trajectory(
    d: int, record: Record, times: List[float], states: List[np.ndarray], nfe: int
) -> Trajectory:
    end = states[-1]
    if record.times is not None:
        grid = list(record.times)
        out = sample_grid(times, states, grid)
        times, states = grid, out
    elif not record.states:
        times, states = [times[0], times[-1]], [states[0], states[-1]]
    col = d
    path_energy = log_det = None
    if record.path_energy:
        path_energy = end[:, col].copy()
        col += 1
    if record.log_det:
        log_det = end[:, col].copy()
    return Trajectory(list(times), [s[:, :d].copy() for s in states], nfe, path_energy, log_det)


def sample_grid(times: Sequence[float], states: Sequence[np.ndarray], grid: Sequence[float]) -> List[np.ndarray]:
    """Linear interpolation of recorded states onto ``grid`` (which must lie inside ``times``)."""
    times = np.asarray(times, dtype=np.float64)
    out = []
    for g in grid:
        if g < times[0] - 1e-12 or g > times[-1] + 1e-12:
            raise DomainError(f"requested time {g} outside [{times[0]}, {times[-1]}]")
        k = int(np.searchsorted(times, g, side="right")) - 1
        k = min(max(k, 0), len(times) - 2) if len(times) > 1 else 0
        if len(times) == 1 or times[k + 1] == times[k]:
            out.append(states[k].copy())
            continue
        w = (g - times[k]) / (times[k + 1] - times[k])
        w = min(max(w, 0.0), 1.0)
        out.append((1.0 - w) * states[k] + w * states[k + 1])
    return out


def _start(x0: np.ndarray, record: Record) -> Tuple[np.ndarray, int]:
    x0 = as_points(x0)
    extra = int(record.path_energy) + int(record.log_det)
    y0 = np.hstack([x0, np.zeros((x0.shape[0], extra))]) if extra else x0.copy()
    return y0, x0.shape[1]


def _check_interval(t_start: float, t_end: float) -> None:
    if not t_end > t_start:
        raise DomainError(f"t_end ({t_end}) must exceed t_start ({t_start})")


def integrate_fixed(
    field_fn: Field,
    x0: np.ndarray,
    t_start: float = 0.0,
    t_end: float = 1.0,
    n_steps: int = 100,
    method: str = "rk4",
    record: Record = Record(),
) -> Trajectory:
    """Explicit Euler or classical RK4 with ``n_steps`` uniform steps."""
    if n_steps < 1:
        raise DomainError(f"n_steps must be >= 1, got {n_steps}")
    if method not in ("euler", "rk4"):
        raise ConfigError(f"unknown fixed-step method {method!r}", "method")
    _check_interval(t_start, t_end)
    y, d = _start(x0, record)
    fn = _Counted(field_fn)
    rhs = _augmented(fn, d, record)
    h = (t_end - t_start) / n_steps
    times = [t_start]
    states = [y.copy()]
    for k in range(n_steps):
        t = t_start + k * h
        if method == "euler":
            y = y + h * rhs(t, y)
        else:
            k1 = rhs(t, y)
            k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
            k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
            k4 = rhs(t + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t_next = t_end if k == n_steps - 1 else t_start + (k + 1) * h
        _check_finite(y, t_next)
        times.append(t_next)
        states.append(y)
    return _trajectory(d, record, times, states, fn.calls)


def integrate_dopri5(
    field_fn: Field,
    x0: np.ndarray,
    t_start: float = 0.0,
    t_end: float = 1.0,
    atol: float = 1e-5,
    rtol: float = 1e-5,
    record: Record = Record(),
    max_steps: int = 100_000,
) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) with PI step control and sup-norm error acceptance.

    ``nfe`` counts every field call, rejected steps included.
    """
    if atol <= 0 or rtol <= 0:
        raise DomainError("atol and rtol must be positive")
    _check_interval(t_start, t_end)
    y, d = _start(x0, record)
    fn = _Counted(field_fn)
    rhs = _augmented(fn, d, record)

    t = t_start
    h = 1e-3 * (t_end - t_start)
    prev_err = 1e-4
    times = [t]
    states = [y.copy()]
    k1 = rhs(t, y)
    steps = 0
    while t < t_end:
        if steps >= max_steps:
            raise StiffnessError(f"dopri5 exceeded {max_steps} steps at t={t:.6g}")
        h = min(h, t_end - t)
        ks = [k1]
        for s in range(1, 7):
            ys = y + h * sum(a * k for a, k in zip(_A[s], ks))
            ks.append(rhs(t + _C[s] * h, ys))
        y_new = y + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
        err = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        # accumulator columns are error-controlled with the state
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = float(np.max(np.abs(err) / scale)) if err.size else 0.0
        if not np.isfinite(err_norm):
            raise DivergenceError("non-finite error estimate", t)
        if err_norm <= 1.0:
            t = t_end if t_end - (t + h) < MIN_STEP else t + h
            y = y_new
            k1 = ks[6]
            steps += 1
            times.append(t)
            states.append(y.copy())
            if err_norm == 0.0:
                factor = MAX_FACTOR
            else:
                factor = SAFETY * err_norm ** (-0.7 / 5) * prev_err ** (0.4 / 5)
            factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
            prev_err = max(err_norm, 1e-4)
        else:
            factor = max(MIN_FACTOR, SAFETY * err_norm ** (-1.0 / 5))
        h = h * factor
        if h < MIN_STEP and t < t_end:
            raise StiffnessError(f"step size underflow ({h:.3e}) at t={t:.6g}")
    logger.debug("dopri5: %d accepted steps, %d field calls", steps, fn.calls)
    return _trajectory(d, record, times, states, fn.calls)


def integrate(
    field_fn: Field,
    x0: np.ndarray,
    t_start: float,
    t_end: float,
    settings: IntegratorSettings,
    record: Record = Record(),
) -> Trajectory:
    if settings.method == "dopri5":
        return integrate_dopri5(field_fn, x0, t_start, t_end, settings.atol, settings.rtol, record)
    return integrate_fixed(field_fn, x0, t_start, t_end, settings.n_steps, settings.method, record)


def integrate_with_logdet(
    field_fn: Field,
    x0: np.ndarray,
    t_start: float,
    t_end: float,
    settings: IntegratorSettings,
    h: float = 1e-4,
) -> Tuple[np.ndarray, np.ndarray, int]:
    """Push ``x0`` forward and accumulate log|det dx_end/dx0| as the integral of div v."""
    traj = integrate(field_fn, x0, t_start, t_end, settings, Record(states=False, log_det=True, div_h=h))
    return traj.final, traj.log_det, traj.nfe
