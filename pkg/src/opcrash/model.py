"""Full networks: Transolver (TS), GeoTransolver (GeoTS) and GeoTransolver with FLARE.

``CrashModel.bind(sample)`` builds the per-trajectory context once and returns
a point-wise predictor used by the temporal drivers.
"""
from __future__ import annotations

import dataclasses
import enum
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Callable

import numpy as np

from .attn import ConfigError, GaleBlock, TransolverBlock
from .geo import DEFAULT_ANCHORS, DEFAULT_SCALES, ContextProjector, PointCloud, multiscale_features
from .numcore import MLP, DimensionError, Module, Tensor, concat
from .temporal import Strategy, input_width, output_width


class Backbone(str, enum.Enum):
    TS = "TS"
    GEOTS = "GeoTS"
    GEOTS_FLARE = "GeoTS-FLARE"

    @classmethod
    def parse(cls, name: str) -> "Backbone":
        key = name.strip().lower().replace("_", "-")
        for b in cls:
            if b.value.lower() == key:
                return b
        aliases = {"transolver": cls.TS, "geotransolver": cls.GEOTS, "flare": cls.GEOTS_FLARE,
                   "geots-flare": cls.GEOTS_FLARE, "geotransolver-flare": cls.GEOTS_FLARE}
        if key in aliases:
            return aliases[key]
        raise ConfigError(f"unknown backbone {name!r}; choose from {[b.value for b in cls]}")


@dataclass
class ModelConfig:
    backbone: Backbone = Backbone.GEOTS_FLARE
    tokens: int = 128
    layers: int = 6
    heads: int = 8
    channels: int = 256
    scales: tuple = DEFAULT_SCALES
    anchors: int = DEFAULT_ANCHORS
    strategy: Strategy = Strategy.ONE_SHOT
    horizon: int = 50
    n_features: int = 3
    n_globals: int = 5
    n_bc: int = 2
    seed: int = 0
    zero_head: bool = True

    def __post_init__(self):
        if not isinstance(self.backbone, Backbone):
            self.backbone = Backbone.parse(str(self.backbone))
        if not isinstance(self.strategy, Strategy):
            self.strategy = Strategy.parse(str(self.strategy))
        self.scales = tuple((float(r), int(c)) for r, c in self.scales)
        if self.layers < 1:
            raise ConfigError("need at least one layer")
        if self.channels % self.heads:
            raise ConfigError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        if self.tokens < 1:
            raise ConfigError("need at least one token / latent query")

    @property
    def in_width(self) -> int:
        return input_width(self.strategy, self.n_features)

    @property
    def out_width(self) -> int:
        return output_width(self.strategy, self.horizon)

    @property
    def geometric(self) -> bool:
        return self.backbone is not Backbone.TS

    def to_record(self) -> dict:
        rec = dataclasses.asdict(self)
        rec["backbone"] = self.backbone.value
        rec["strategy"] = self.strategy.value
        rec["scales"] = [list(s) for s in self.scales]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in rec.items() if k in names})


@dataclass
class SampleInputs:
    """What a model conditions on besides the strategy's point inputs.

    ``positions`` is the initial frame in physical units (geometry is built
    from it); ``features``, ``globals`` and ``bc`` are already normalized.
    """

    positions: np.ndarray
    features: np.ndarray
    globals: np.ndarray
    bc: np.ndarray
    _geo_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def augmented(self, scales) -> np.ndarray:
        key = tuple(scales)
        if key not in self._geo_cache:
            self._geo_cache[key] = multiscale_features(PointCloud(self.positions, self.features).normalized(), scales)
        return self._geo_cache[key]


class CrashModel(Module):
    def __init__(self, config: ModelConfig):
        self.config = cfg = config
        rng = np.random.default_rng(cfg.seed)
        c = cfg.channels
        geo_w = sum(5 + cfg.n_features for _ in cfg.scales) if cfg.geometric else 0
        self.embed = MLP((cfg.in_width + geo_w, c, c), rng)
        if cfg.backbone is Backbone.TS:
            self.context = None
            self.blocks = [TransolverBlock(c, cfg.heads, cfg.tokens, rng) for _ in range(cfg.layers)]
        else:
            self.context = ContextProjector(cfg.n_features, cfg.n_globals, cfg.n_bc, c, rng,
                                            scales=cfg.scales, anchors=cfg.anchors)
            kind = "physics" if cfg.backbone is Backbone.GEOTS else "flare"
            self.blocks = [GaleBlock(c, cfg.heads, cfg.tokens, c, rng, self_attention=kind)
                           for _ in range(cfg.layers)]
        self.head = MLP((c, 2 * c, cfg.out_width), rng, zero_last=cfg.zero_head)

    def bind(self, sample: SampleInputs) -> Callable[[Tensor], Tensor]:
        """Build context for ``sample`` once and return the point-wise predictor."""
        cfg = self.config
        if cfg.geometric:
            aug = sample.augmented(cfg.scales)
            geo = Tensor(aug[:, 3 + cfg.n_features:])
            ctx = self.context(PointCloud(sample.positions, sample.features), sample.globals, sample.bc,
                               augmented=aug).tokens
        else:
            geo, ctx = None, None

        def predict(point_inputs: Tensor) -> Tensor:
            if point_inputs.shape[-1] != cfg.in_width:
                raise DimensionError(f"expected {cfg.in_width} input features, got {point_inputs.shape[-1]}")
            h = point_inputs if geo is None else concat([point_inputs, geo], axis=1)
            h = self.embed(h)
            for block in self.blocks:
                h = block(h, ctx)
            return self.head(h)

        return predict

    def forward(self, point_inputs: Tensor, sample: SampleInputs) -> Tensor:
        return self.bind(sample)(point_inputs)

    __call__ = forward


def build(config: ModelConfig) -> CrashModel:
    return CrashModel(config)


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"OPCK"
CKPT_VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


def _put_str(fh: BinaryIO, s: str) -> None:
    raw = s.encode("utf-8")
    fh.write(_U32.pack(len(raw)) + raw)


def write_checkpoint(fh: BinaryIO, config: ModelConfig, blobs: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """``OPCK``, version, JSON config record, then named little-endian f32 blobs."""
    record = {"model": config.to_record(), "meta": meta or {}}
    fh.write(CKPT_MAGIC + _U32.pack(CKPT_VERSION))
    _put_str(fh, json.dumps(record, sort_keys=True))
    fh.write(_U32.pack(len(blobs)))
    for name, arr in blobs.items():
        arr = np.asarray(arr)
        _put_str(fh, name)
        fh.write(_U32.pack(arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _take(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def _get_u32(fh: BinaryIO) -> int:
    return _U32.unpack(_take(fh, 4))[0]


def read_checkpoint(fh: BinaryIO) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    if _take(fh, 4) != CKPT_MAGIC:
        raise CheckpointError("not an OPCK checkpoint (bad magic)")
    version = _get_u32(fh)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    record = json.loads(_take(fh, _get_u32(fh)).decode("utf-8"))
    blobs = {}
    for _ in range(_get_u32(fh)):
        name = _take(fh, _get_u32(fh)).decode("utf-8")
        ndim = _get_u32(fh)
        shape = struct.unpack(f"<{ndim}I", _take(fh, 4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        blobs[name] = np.frombuffer(_take(fh, 4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    return ModelConfig.from_record(record["model"]), blobs, record.get("meta", {})


def model_blobs(model: CrashModel) -> dict[str, np.ndarray]:
    return {name: p.data for name, p in model.named_parameters()}


def load_parameters(model: CrashModel, blobs: dict[str, np.ndarray]) -> None:
    params = model.parameters()
    missing = [n for n in params if n not in blobs]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {missing[:3]}")
    for name, p in params.items():
        if blobs[name].shape != p.shape:
            raise CheckpointError(f"shape mismatch for {name}: {blobs[name].shape} vs {p.shape}")
        p.data = Tensor(blobs[name], dtype=np.float32).data
        p.grad = None


def save_checkpoint(path, model: CrashModel, extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    blobs = model_blobs(model)
    blobs.update(extra or {})
    buf = io.BytesIO()
    write_checkpoint(buf, model.config, blobs, meta)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[CrashModel, dict[str, np.ndarray], dict]:
    """Rebuild the model from its config record; returns (model, non-parameter blobs, meta)."""
    with open(path, "rb") as fh:
        config, blobs, meta = read_checkpoint(fh)
    model = CrashModel(config)
    load_parameters(model, blobs)
    names = set(model.parameters())
    return model, {k: v for k, v in blobs.items() if k not in names}, meta
