"""Memory and epoch-cost benchmarks.

Memory is counted in logical bytes by the numcore allocation tracker (forward
values, saved buffers and gradients), not process RSS.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .attn import GaleBlock, TransolverBlock
from .crashdata import DatasetFile
from .model import Backbone
from .numcore import Tensor, backward, track_memory
from .temporal import Strategy
from .trainer import TrainConfig, evaluate, train

BENCH_NS = (1024, 2048, 4096, 8192)
BENCH_M = 128
BENCH_C = 256
BENCH_H = 8
CONTEXT_TOKENS = 34
QUADRATIC_LIMIT = 0.05
EPOCH_STRATEGIES = ("one-shot", "time-conditional", "ar")


def make_block(backbone: Backbone, channels: int, heads: int, tokens: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    if backbone is Backbone.TS:
        return TransolverBlock(channels, heads, tokens, rng)
    kind = "physics" if backbone is Backbone.GEOTS else "flare"
    return GaleBlock(channels, heads, tokens, channels, rng, self_attention=kind)


def block_peak(backbone: Backbone | str, n: int, tokens: int = BENCH_M, channels: int = BENCH_C,
               heads: int = BENCH_H, seed: int = 0) -> int:
    """Peak logical bytes of one block's forward + backward on N points.

    Parameters and inputs exist before the scope opens; everything the pass
    allocates (activations, saved buffers, parameter gradients) counts.
    """
    backbone = backbone if isinstance(backbone, Backbone) else Backbone.parse(backbone)
    block = make_block(backbone, channels, heads, tokens, seed)
    rng = np.random.default_rng(seed + 1)
    x = Tensor(rng.standard_normal((n, channels)))
    ctx = Tensor(rng.standard_normal((CONTEXT_TOKENS, channels)))
    with track_memory(f"{backbone.value}/{n}") as scope:
        y = block(x, ctx)
        backward(y.sum())
        del y
    return int(scope.peak)


@dataclass
class MemFit:
    a: float
    b: float
    c: float

    def quadratic_share(self, n: int) -> float:
        """|a| N^2 relative to |b| N at ``n``."""
        return abs(self.a) * n * n / max(abs(self.b) * n, 1e-30)


def fit_quadratic(ns: Sequence[int], peaks: Sequence[float]) -> MemFit:
    a, b, c = np.polyfit(np.asarray(ns, dtype=np.float64), np.asarray(peaks, dtype=np.float64), 2)
    return MemFit(float(a), float(b), float(c))


@dataclass
class MemReport:
    ns: list[int]
    tokens: int
    channels: int
    heads: int
    peaks: dict[str, list[int]] = field(default_factory=dict)
    fits: dict[str, dict] = field(default_factory=dict)
    quadratic_share: dict[str, float] = field(default_factory=dict)
    ratio: float = float("nan")
    m_doubling: dict[str, float] = field(default_factory=dict)

    @property
    def linear(self) -> bool:
        return all(v < QUADRATIC_LIMIT for v in self.quadratic_share.values())

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["linear"] = self.linear
        rec["ratio_at_n"] = max(self.ns)
        rec["reference_ratio"] = 2.0
        return rec


def bench_mem(ns: Sequence[int] = BENCH_NS, tokens: int = BENCH_M, channels: int = BENCH_C, heads: int = BENCH_H,
              backbones: Sequence[str] = ("TS", "GeoTS", "GeoTS-FLARE"), m_probe: bool = True,
              seed: int = 0) -> MemReport:
    if len(ns) < 4:
        raise ValueError("the fit needs at least 4 values of N")
    ns = sorted(int(n) for n in ns)
    rep = MemReport(list(ns), tokens, channels, heads)
    for name in backbones:
        bb = Backbone.parse(name)
        peaks = [block_peak(bb, n, tokens, channels, heads, seed) for n in ns]
        fit = fit_quadratic(ns, peaks)
        rep.peaks[bb.value] = peaks
        rep.fits[bb.value] = asdict(fit)
        rep.quadratic_share[bb.value] = fit.quadratic_share(ns[-1])
        if m_probe:
            twice = block_peak(bb, ns[-1], 2 * tokens, channels, heads, seed)
            rep.m_doubling[bb.value] = twice / peaks[-1]
    if "GeoTS" in rep.peaks and "GeoTS-FLARE" in rep.peaks:
        rep.ratio = rep.peaks["GeoTS"][-1] / rep.peaks["GeoTS-FLARE"][-1]
    return rep


@dataclass
class CostReport:
    backbone: str
    epochs: int
    samples: int
    horizon: int
    epoch_times: dict[str, list[float]] = field(default_factory=dict)
    median: dict[str, float] = field(default_factory=dict)
    train_calls: dict[str, int] = field(default_factory=dict)
    inference_calls: dict[str, int] = field(default_factory=dict)

    @property
    def ordering(self) -> bool:
        m = self.median
        keys = ("one-shot", "time-conditional", "ar")
        return all(k in m for k in keys) and m["one-shot"] < m["time-conditional"] < m["ar"]

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["ordering_ok"] = self.ordering
        return rec


def bench_epoch(dataset: DatasetFile, epochs: int = 3, strategies: Sequence[str] = EPOCH_STRATEGIES,
                base: TrainConfig | None = None, log=None) -> CostReport:
    """Median training-epoch wall time per strategy on identical data and backbone.

    Evaluation and checkpointing are off while timing; sample order is the
    same for every strategy because each run uses the same seed.
    """
    if epochs < 3:
        raise ValueError("need at least 3 timed epochs")
    base = base or TrainConfig()
    n, t, _, _ = dataset.dims
    rep = CostReport(base.backbone, epochs, len(dataset), t)
    for name in strategies:
        strat = Strategy.parse(name).value
        cfg = TrainConfig(**dict(base.to_record(), strategy=strat, epochs=epochs, eval_every=0))
        result = train(cfg, dataset, timing_only=True)
        times = [r["wall_time"] for r in result.ledger.records]
        rep.epoch_times[strat] = times
        rep.median[strat] = statistics.median(times)
        rep.train_calls[strat] = result.ledger.records[-1]["model_calls"]
        one = DatasetFile(dataset.split, dataset.dt, dataset.samples[:1])
        rep.inference_calls[strat] = evaluate(result.model, result.stats, one).get("model_calls", 0)
        if log:
            log(f"{strat}: median epoch {rep.median[strat]:.3f}s, inference calls {rep.inference_calls[strat]}")
    return rep


def timed(fn, *args, **kwargs) -> tuple[float, object]:
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return time.perf_counter() - t0, out
