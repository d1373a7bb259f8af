"""Temporal prediction strategies, explicit integration, losses and metrics.

A *predictor* here is any callable mapping per-point inputs (N x F_in tensor)
to per-point outputs; context (geometry, globals) is bound beforehand so the
drivers only see point features. Input layouts:

* autoregressive / teacher forcing: ``[x(t-1), x(t-2), f]``, output acceleration (N x 3)
* one-shot: ``[x(0), f]``, output displacements for t=1..T, time-major (N x 3T)
* time-conditional: ``[x(0), f, t / (T dt)]``, output displacement at t (N x 3)
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .numcore import Tensor, concat, l2norm, no_grad, stack
from .numcore.tensor import default_dtype

Predictor = Callable[[Tensor], Tensor]
DIM = 3


class Strategy(str, enum.Enum):
    AR = "ar"
    TEACHER_FORCING = "teacher-forcing"
    ONE_SHOT = "one-shot"
    TIME_CONDITIONAL = "time-conditional"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        key = name.strip().lower().replace("_", "-")
        aliases = {"tf": "teacher-forcing", "oneshot": "one-shot", "tc": "time-conditional",
                   "autoregressive": "ar", "time-condition": "time-conditional"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown strategy {name!r}; choose from {[s.value for s in cls]}") from None


def input_width(strategy: Strategy, n_features: int) -> int:
    return {Strategy.AR: 2 * DIM, Strategy.TEACHER_FORCING: 2 * DIM,
            Strategy.ONE_SHOT: DIM, Strategy.TIME_CONDITIONAL: DIM + 1}[strategy] + n_features


def output_width(strategy: Strategy, horizon: int) -> int:
    return DIM * horizon if strategy is Strategy.ONE_SHOT else DIM


class DivergenceError(FloatingPointError):
    """Rollout produced a non-finite state; ``step`` is the offending step index."""

    def __init__(self, step: int):
        super().__init__(f"rollout diverged at step {step}")
        self.step = step


class TimeRangeError(ValueError):
    pass


@dataclass
class Trajectory:
    """Positions on a uniform time grid plus everything the models condition on."""

    positions: np.ndarray          # (T+1) x N x 3
    v0: np.ndarray                 # N x 3
    dt: float
    features: np.ndarray           # N x F
    globals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bc: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.positions.ndim != 3 or self.positions.shape[2] != DIM:
            raise ValueError(f"positions must be (T+1) x N x 3, got {self.positions.shape}")
        if self.v0.shape != self.positions.shape[1:]:
            raise ValueError("v0 must be N x 3")

    @property
    def horizon(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def n_points(self) -> int:
        return self.positions.shape[1]


@dataclass
class TrajectoryPrediction:
    positions: Tensor                     # Q x N x 3 (Q = T+1 on the full grid)
    steps: np.ndarray                     # time indices of the rows of ``positions``
    calls: int
    velocities: np.ndarray | None = None
    accelerations: np.ndarray | None = None

    def step_errors(self, truth: np.ndarray) -> np.ndarray:
        """Relative L2 error of each predicted frame against ``truth`` (full grid)."""
        return relative_l2_per_step(self.positions.data, truth[self.steps])


def euler_step(x_prev, v_prev, accel, dt: float):
    """Velocity first, then position with the updated velocity."""
    v_next = v_prev + dt * accel
    x_next = x_prev + dt * v_next
    return x_next, v_next


def _const(a: np.ndarray) -> Tensor:
    return Tensor(a, dtype=default_dtype())


def _check_finite(x: Tensor, step: int) -> None:
    if not np.all(np.isfinite(x.data)):
        raise DivergenceError(step)


def rollout_ar(model: Predictor, traj: Trajectory, mode: str = "inference", truncate: int = 0) -> TrajectoryPrediction:
    """Unroll from x(0) feeding the model its own previous two states.

    ``mode="train"`` keeps the graph through the whole horizon unless
    ``truncate`` > 0, which detaches the carried state every that many steps;
    ``"inference"`` runs without gradient tracking.
    """
    if mode not in ("train", "inference"):
        raise ValueError(f"mode must be 'train' or 'inference', got {mode!r}")
    if traj.horizon < 1:
        raise ValueError("rollout needs T >= 1")
    if mode == "inference":
        with no_grad():
            return _rollout_ar(model, traj)
    return _rollout_ar(model, traj, truncate)


def _rollout_ar(model: Predictor, traj: Trajectory, truncate: int = 0) -> TrajectoryPrediction:
    f = _const(traj.features)
    x0 = _const(traj.positions[0])
    x_prev, x_prev2 = x0, x0
    v = _const(traj.v0)
    xs, vs, acc = [x0], [traj.v0.astype(default_dtype())], [np.zeros_like(traj.v0, dtype=default_dtype())]
    calls = 0
    for t in range(1, traj.horizon + 1):
        a = model(concat([x_prev, x_prev2, f], axis=1))
        calls += 1
        _check_finite(a, t)
        x_next, v = euler_step(x_prev, v, a, traj.dt)
        _check_finite(x_next, t)
        xs.append(x_next)
        vs.append(v.data)
        acc.append(a.data)
        x_prev2, x_prev = x_prev, x_next
        if truncate and t % truncate == 0:
            x_prev2, x_prev, v = x_prev2.detach(), x_prev.detach(), v.detach()
    return TrajectoryPrediction(stack(xs), np.arange(traj.horizon + 1), calls,
                                velocities=np.stack(vs), accelerations=np.stack(acc))


def finite_difference_velocity(positions: np.ndarray, v0: np.ndarray, dt: float) -> np.ndarray:
    """Backward differences; the first frame takes the supplied initial velocity."""
    v = np.empty_like(positions)
    v[0] = v0
    v[1:] = (positions[1:] - positions[:-1]) / dt
    return v


def rollout_teacher_forcing(model: Predictor, traj: Trajectory) -> TrajectoryPrediction:
    """One-step predictions anchored on ground truth (training form).

    Step t sees the true x(t-1), x(t-2) and integrates from the true velocity
    at t-1, so each predicted frame depends only on its own model call.
    """
    if traj.horizon < 1:
        raise ValueError("teacher forcing needs T >= 1")
    f = _const(traj.features)
    x = traj.positions
    v_true = finite_difference_velocity(x, traj.v0, traj.dt)
    xs = [_const(x[0])]
    acc = [np.zeros_like(x[0], dtype=default_dtype())]
    vs = [traj.v0.astype(default_dtype())]
    calls = 0
    for t in range(1, traj.horizon + 1):
        prev = _const(x[t - 1])
        prev2 = _const(x[max(t - 2, 0)])
        a = model(concat([prev, prev2, f], axis=1))
        calls += 1
        _check_finite(a, t)
        x_next, v = euler_step(prev, _const(v_true[t - 1]), a, traj.dt)
        _check_finite(x_next, t)
        xs.append(x_next)
        vs.append(v.data)
        acc.append(a.data)
    return TrajectoryPrediction(stack(xs), np.arange(traj.horizon + 1), calls,
                                velocities=np.stack(vs), accelerations=np.stack(acc))


def predict_oneshot(model: Predictor, traj: Trajectory) -> TrajectoryPrediction:
    """All T frames from one call; outputs are displacements from x(0)."""
    n, t_len = traj.n_points, traj.horizon
    x0 = _const(traj.positions[0])
    y = model(concat([x0, _const(traj.features)], axis=1))
    if y.shape != (n, DIM * t_len):
        raise ValueError(f"one-shot head must emit N x {DIM * t_len}, got {y.shape}")
    disp = y.reshape(n, t_len, DIM).transpose(1, 0, 2)
    frames = disp + x0
    positions = concat([x0.reshape(1, n, DIM), frames], axis=0)
    return TrajectoryPrediction(positions, np.arange(t_len + 1), 1)


def normalized_time(traj: Trajectory, times: Sequence[float]) -> np.ndarray:
    span = traj.horizon * traj.dt
    t = np.asarray(times, dtype=np.float64)
    if np.any(t < -1e-9 * span) or np.any(t > span * (1 + 1e-9)):
        raise TimeRangeError(f"query times must lie in [0, {span:g}]")
    return t / span


def predict_time_conditional(model: Predictor, traj: Trajectory, times: Sequence[float]) -> TrajectoryPrediction:
    """One call per queried time (ms); outputs are displacements from x(0).

    Query times on the grid map to ``steps``; off-grid times get the nearest
    index there, which only matters for comparison against truth.
    """
    tau = normalized_time(traj, times)
    n = traj.n_points
    x0 = _const(traj.positions[0])
    f = _const(traj.features)
    frames = []
    for s in tau:
        col = _const(np.full((n, 1), s))
        y = model(concat([x0, f, col], axis=1))
        if y.shape != (n, DIM):
            raise ValueError(f"time-conditional head must emit N x {DIM}, got {y.shape}")
        frames.append(y + x0)
    steps = np.rint(np.asarray(times, dtype=np.float64) / traj.dt).astype(np.int64)
    return TrajectoryPrediction(stack(frames), steps, len(frames))


def grid_times(traj: Trajectory, start: int = 0) -> np.ndarray:
    return np.arange(start, traj.horizon + 1) * traj.dt


def sequence_loss(pred: Tensor, truth: np.ndarray, form: str = "l2") -> Tensor:
    """Sum over frames of the per-frame L2 norm (``"l2"``) or the mean squared error (``"mse"``)."""
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ")
    diff = pred - _const(truth)
    if form == "l2":
        return l2norm(diff, axis=tuple(range(1, diff.ndim))).sum()
    if form == "mse":
        return (diff * diff).mean()
    raise ValueError(f"unknown loss form {form!r}")


def relative_l2_per_step(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, truth.ndim))
    num = np.sqrt(((pred - truth) ** 2).sum(axis=axes))
    den = np.sqrt((truth ** 2).sum(axis=axes))
    return num / np.where(den > 0, den, 1.0)


def relative_l2(pred: np.ndarray, truth: np.ndarray) -> float:
    """||pred - truth|| / ||truth|| over all frames and points."""
    return float(np.sqrt(((pred - truth) ** 2).sum()) / np.sqrt((truth ** 2).sum()))


def time_derivatives(positions: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Velocity and acceleration from second-order finite differences along time.

    Central in the interior, second-order one-sided at both ends (exact for
    quadratic motion).
    """
    order = 2 if positions.shape[0] >= 3 else 1
    vel = np.gradient(positions, dt, axis=0, edge_order=order)
    acc = np.gradient(vel, dt, axis=0, edge_order=order)
    return vel, acc


def kinematics_metrics(pred: np.ndarray, truth: np.ndarray, dt: float, probes: Sequence[int],
                       pred_velocity: np.ndarray | None = None,
                       pred_acceleration: np.ndarray | None = None) -> dict:
    """Full-field relative L2 per frame and probe position/velocity/acceleration MSE.

    Velocities and accelerations of the prediction come from finite
    differences unless supplied (autoregressive rollouts integrate them).
    Truth kinematics always come from finite differences.
    """
    probes = list(probes)
    if probes and (min(probes) < 0 or max(probes) >= truth.shape[1]):
        raise IndexError("probe id out of range")
    per_step = relative_l2_per_step(pred, truth)
    tv, ta = time_derivatives(truth, dt)
    pv, pa = time_derivatives(pred, dt)
    if pred_velocity is not None:
        pv = pred_velocity
    if pred_acceleration is not None:
        pa = pred_acceleration

    def mse(a, b):
        return float(((a[:, probes] - b[:, probes]) ** 2).mean()) if probes else 0.0

    return {
        "rel_l2": relative_l2(pred[1:], truth[1:]) if len(truth) > 1 else relative_l2(pred, truth),
        "rel_l2_per_step": per_step.tolist(),
        "probe_pos_mse": mse(pred, truth),
        "probe_vel_mse": mse(pv, tv),
        "probe_acc_mse": mse(pa, ta),
    }
