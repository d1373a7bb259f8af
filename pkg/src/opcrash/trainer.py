"""Adam, the training loop, evaluation and the run ledger."""
from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .crashdata import DatasetFile, NormStats, Sample, normalize_stats
from .model import Backbone, CrashModel, ModelConfig, SampleInputs, load_checkpoint, save_checkpoint
from .numcore import Tensor, backward, no_grad, track_memory
from .temporal import (
    DivergenceError,
    Strategy,
    Trajectory,
    TrajectoryPrediction,
    grid_times,
    kinematics_metrics,
    predict_oneshot,
    predict_time_conditional,
    rollout_ar,
    rollout_teacher_forcing,
    sequence_loss,
)


class TrainError(RuntimeError):
    pass


# ---------------------------------------------------------------- configuration

@dataclass
class TrainConfig:
    """Everything a run depends on besides the dataset.

    Keys of the flat ``key = value`` config file are the field names below.
    """

    strategy: str = "one-shot"
    backbone: str = "GeoTS-FLARE"
    lr: float = 1e-3
    lr_min: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 1
    accumulate: int = 4
    seed: int = 0
    eval_every: int = 10
    loss: str = "l2"
    tokens: int = 32
    layers: int = 3
    heads: int = 8
    channels: int = 64
    anchors: int = 32
    tc_samples: int = 8
    truncate: int = 0           # AR backprop window in steps; 0 = full horizon
    max_samples: int = 0        # use only the first k training samples; 0 = all

    def __post_init__(self):
        self.strategy = Strategy.parse(str(self.strategy)).value
        self.backbone = Backbone.parse(str(self.backbone)).value
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size != 1:
            raise ValueError("batch_size is fixed at 1 trajectory; use accumulate for larger effective batches")
        if self.accumulate < 1 or self.eval_every < 0 or self.tc_samples < 1:
            raise ValueError("accumulate, tc_samples must be >= 1 and eval_every >= 0")
        if self.loss not in ("l2", "mse"):
            raise ValueError("loss must be 'l2' or 'mse'")

    def model_config(self, dataset: DatasetFile) -> ModelConfig:
        n, t, _, f = dataset.dims
        tr = dataset.samples[0].trajectory
        return ModelConfig(backbone=self.backbone, tokens=self.tokens, layers=self.layers, heads=self.heads,
                           channels=self.channels, anchors=self.anchors, strategy=self.strategy, horizon=t,
                           n_features=f, n_globals=len(tr.globals), n_bc=len(tr.bc), seed=self.seed)

    def to_record(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(field: dataclasses.Field, text: str):
    kind = field.type if isinstance(field.type, str) else field.type.__name__
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(fields[key], value)
    return out


def load_config(path, **overrides) -> TrainConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_record().items())


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    step: int = 0
    m: dict = dataclasses.field(default_factory=dict)
    v: dict = dataclasses.field(default_factory=dict)


class Adam:
    """Bias-corrected Adam over a name -> parameter mapping."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = AdamState()
        self.rejected: list[str] = []

    def step(self, grads: dict[str, np.ndarray] | None = None, lr: float | None = None) -> bool:
        """Apply one update; returns False (parameters untouched) on a non-finite gradient."""
        lr = self.lr if lr is None else lr
        if grads is None:
            grads = {n: p.grad for n, p in self.params.items()}
        bad = [n for n, g in grads.items() if g is not None and not np.all(np.isfinite(g))]
        if bad:
            self.rejected.append(f"step {self.state.step + 1}: non-finite gradient in {', '.join(bad[:3])}")
            return False
        st = self.state
        st.step += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** st.step, 1.0 - b2 ** st.step
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            m = st.m.get(name)
            v = st.v.get(name)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            st.m[name], st.v[name] = m, v
            upd = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - upd).astype(p.data.dtype)
        return True


def cosine_lr(step: int, total: int, lr: float, lr_min: float) -> float:
    if total <= 1:
        return lr
    frac = min(max(step / (total - 1), 0.0), 1.0)
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * frac))


# ---------------------------------------------------------------- normalized samples

@dataclass
class Prepared:
    """A sample in normalized coordinates, plus what the model conditions on."""

    sample: Sample
    traj: Trajectory           # z-scored positions and features, scaled velocity
    inputs: SampleInputs


def prepare(sample: Sample, stats: NormStats) -> Prepared:
    tr = sample.trajectory
    z = Trajectory(
        positions=stats.apply("position", tr.positions),
        v0=stats.scale("position", tr.v0),
        dt=tr.dt,
        features=stats.apply("features", tr.features),
        globals=stats.apply("globals", tr.globals),
        bc=stats.apply("bc", tr.bc),
    )
    inputs = SampleInputs(np.asarray(tr.positions[0], dtype=np.float64), z.features, z.globals, z.bc)
    return Prepared(sample, z, inputs)


def predictor(model: CrashModel, prep: Prepared, stats: NormStats) -> Callable[[Tensor], Tensor]:
    fn = model.bind(prep.inputs)
    if model.config.strategy in (Strategy.AR, Strategy.TEACHER_FORCING):
        scale = stats.accel_scale
        return lambda x: fn(x) * scale
    return fn


def run_strategy(model: CrashModel, prep: Prepared, stats: NormStats, train: bool = False,
                 rng: np.random.Generator | None = None, tc_samples: int = 8,
                 truncate: int = 0) -> TrajectoryPrediction:
    """Predict a trajectory in normalized space with the model's strategy.

    Training the time-conditional strategy queries ``tc_samples`` random grid
    times; evaluation always uses the full grid.
    """
    kind = model.config.strategy
    fn = predictor(model, prep, stats)
    tr = prep.traj
    if kind is Strategy.ONE_SHOT:
        return predict_oneshot(fn, tr)
    if kind is Strategy.TIME_CONDITIONAL:
        if train:
            k = min(tc_samples, tr.horizon)
            steps = np.sort(rng.choice(np.arange(1, tr.horizon + 1), size=k, replace=False))
            return predict_time_conditional(fn, tr, steps * tr.dt)
        return predict_time_conditional(fn, tr, grid_times(tr))
    if kind is Strategy.TEACHER_FORCING and train:
        return rollout_teacher_forcing(fn, tr)
    return rollout_ar(fn, tr, mode="train" if train else "inference", truncate=truncate)


def strategy_loss(pred: TrajectoryPrediction, prep: Prepared, form: str) -> Tensor:
    steps = pred.steps
    keep = np.nonzero(steps > 0)[0]
    truth = prep.traj.positions[steps[keep]]
    rows = pred.positions if len(keep) == len(steps) else pred.positions[keep]
    return sequence_loss(rows, truth, form)


# ---------------------------------------------------------------- evaluation

def evaluate(model, stats: NormStats, dataset: DatasetFile) -> dict:
    """Physical-unit metrics over every sample of ``dataset`` on the full time grid.

    ``model`` needs ``config`` and ``bind``; divergent autoregressive rollouts
    are reported per sample instead of raising.
    """
    if len(dataset) == 0:
        raise TrainError(f"split {dataset.split!r} is empty")
    per_sample, err_sq, truth_sq, per_step = [], 0.0, 0.0, []
    unstable = []
    std = stats.std["position"].astype(np.float64)
    with no_grad():
        for sample in dataset.samples:
            prep = prepare(sample, stats)
            truth = np.asarray(sample.trajectory.positions, dtype=np.float64)
            try:
                pred = run_strategy(model, prep, stats)
            except DivergenceError as exc:
                unstable.append({"key": sample.key[:16], "step": exc.step})
                continue
            pos = stats.invert("position", pred.positions.data)
            vel = acc = None
            if pred.velocities is not None:
                vel, acc = pred.velocities * std, pred.accelerations * std
            m = kinematics_metrics(pos, truth, sample.trajectory.dt, sample.probes, vel, acc)
            m["key"] = sample.key[:16]
            m["model_calls"] = pred.calls
            per_sample.append(m)
            err_sq += float(((pos[1:] - truth[1:]) ** 2).sum())
            truth_sq += float((truth[1:] ** 2).sum())
            per_step.append(m["rel_l2_per_step"])
    record = {"split": dataset.split, "samples": len(dataset), "unstable": unstable}
    if per_sample:
        record.update({
            "rel_l2": math.sqrt(err_sq / truth_sq),
            "rel_l2_per_step": np.mean(per_step, axis=0).tolist(),
            "probe_pos_mse": float(np.mean([m["probe_pos_mse"] for m in per_sample])),
            "probe_vel_mse": float(np.mean([m["probe_vel_mse"] for m in per_sample])),
            "probe_acc_mse": float(np.mean([m["probe_acc_mse"] for m in per_sample])),
            "model_calls": int(per_sample[0]["model_calls"]),
            "per_sample": per_sample,
        })
    else:
        record["rel_l2"] = float("nan")
    return record


def evaluate_checkpoint(path, dataset: DatasetFile) -> dict:
    model, extra, _ = load_checkpoint(path)
    return evaluate(model, NormStats.from_blobs(extra), dataset)


# ---------------------------------------------------------------- training loop

class RunLedger:
    """Append-only JSONL epoch records."""

    def __init__(self, path: Path | str | None = None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.write_text("")

    def append(self, record: dict) -> None:
        if self.records and record["epoch"] <= self.records[-1]["epoch"]:
            raise TrainError("ledger epochs must increase")
        self.records.append(record)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


@dataclass
class TrainResult:
    model: CrashModel
    stats: NormStats
    ledger: RunLedger
    best_epoch: int
    best_metric: float
    checkpoint: Path | None = None


def _mean_grads(params: dict[str, Tensor], k: int) -> dict[str, np.ndarray]:
    return {n: (None if p.grad is None else p.grad / k) for n, p in params.items()}


def train(cfg: TrainConfig, train_set: DatasetFile, val_set: DatasetFile | None = None,
          out_dir: Path | str | None = None, timing_only: bool = False,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Minimize the strategy loss in normalized space with Adam.

    Each optimizer step averages gradients over ``cfg.accumulate`` single
    trajectories. A diverging autoregressive rollout skips that sample and
    marks the epoch ``unstable``. With ``timing_only`` no evaluation or
    checkpointing happens, so epoch times measure the training pass alone.
    """
    if len(train_set) == 0:
        raise TrainError("training split is empty")
    samples = train_set.samples[: cfg.max_samples] if cfg.max_samples else train_set.samples
    stats = normalize_stats(samples)
    model = CrashModel(cfg.model_config(train_set))
    params = model.parameters()
    opt = Adam(params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    prepared = [prepare(s, stats) for s in samples]
    steps_per_epoch = math.ceil(len(prepared) / cfg.accumulate)
    total_steps = steps_per_epoch * cfg.epochs
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    ledger = RunLedger(out / "ledger.jsonl" if out else None)
    ckpt = out / "best.opck" if out else None
    best_epoch, best = 0, float("inf")
    meta = {"train_config": cfg.to_record()}

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(prepared))
        t0 = time.perf_counter()
        losses, unstable, calls = [], [], 0
        rejected_before = len(opt.rejected)
        with track_memory("epoch") as scope:
            for start in range(0, len(order), cfg.accumulate):
                chunk = order[start:start + cfg.accumulate]
                model.zero_grad()
                used = 0
                for i in chunk:
                    prep = prepared[i]
                    try:
                        pred = run_strategy(model, prep, stats, train=True, rng=rng,
                                           tc_samples=cfg.tc_samples, truncate=cfg.truncate)
                        loss = strategy_loss(pred, prep, cfg.loss)
                    except DivergenceError as exc:
                        unstable.append({"key": prep.sample.key[:16], "step": exc.step})
                        continue
                    calls += pred.calls
                    if not np.isfinite(loss.item()):
                        unstable.append({"key": prep.sample.key[:16], "step": -1})
                        continue
                    backward(loss)
                    losses.append(loss.item())
                    used += 1
                    del pred, loss
                if used:
                    step = opt.state.step
                    opt.step(_mean_grads(params, used), lr=cosine_lr(step, total_steps, cfg.lr, cfg.lr_min))
        wall = time.perf_counter() - t0
        train_loss = float(np.mean(losses)) if losses else float("nan")
        record = {
            "epoch": epoch,
            "wall_time": wall,
            "train_loss": train_loss,
            "peak_bytes": int(scope.peak),
            "model_calls": calls,
            "status": "unstable" if unstable else "ok",
            "unstable": unstable,
            "rejected_steps": opt.rejected[rejected_before:],
        }
        evaluate_now = (not timing_only) and val_set is not None and len(val_set) > 0 and cfg.eval_every > 0 and (
            epoch % cfg.eval_every == 0 or epoch == cfg.epochs)
        if evaluate_now:
            metrics = evaluate(model, stats, val_set)
            record["val_rel_l2"] = metrics["rel_l2"]
            score = metrics["rel_l2"] if np.isfinite(metrics["rel_l2"]) else float("inf")
        elif val_set is None or len(val_set) == 0 or cfg.eval_every == 0:
            score = train_loss if np.isfinite(train_loss) else float("inf")
        else:
            score = None
        if not timing_only and score is not None and score < best:
            best, best_epoch = score, epoch
            record["best"] = True
            if ckpt:
                save_checkpoint(ckpt, model, stats.blobs(), dict(meta, epoch=epoch, metric=best))
        ledger.append(record)
        if log:
            extra = f" val_rel_l2={record['val_rel_l2']:.4g}" if "val_rel_l2" in record else ""
            log(f"epoch {epoch:4d} loss={train_loss:.5g}{extra} t={wall:.2f}s {record['status']}")
    if out:
        save_checkpoint(out / "last.opck", model, stats.blobs(), dict(meta, epoch=cfg.epochs))
        if best_epoch == 0:
            ckpt = out / "last.opck"
    return TrainResult(model, stats, ledger, best_epoch, best, ckpt)


def ledger_fingerprint(records: Sequence[dict]) -> list[dict]:
    """Ledger records without wall-clock fields (which never reproduce)."""
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in records]


def train_relative_l2(result: TrainResult, dataset: DatasetFile) -> float:
    return evaluate(result.model, result.stats, dataset)["rel_l2"]

