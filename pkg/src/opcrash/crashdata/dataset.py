"""Design-of-experiments sweep, train/val/test splits and the OPDS container.

OPDS layout (little-endian throughout)::

    header   b"OPDS", version u32, N u32, T u32, D u32, F u32, dt f64,
             split tag (u32 length + UTF-8), sample count u32
    sample   config (6 f64, i64 seed, f64 imperfection),
             trajectory (T+1) x N x D f32, V0 N x D f32, features N x F f32,
             probe count u32, probe ids u32...

``T`` is the number of steps, so each trajectory holds ``T + 1`` frames.
"""
from __future__ import annotations

import hashlib
import io
import itertools
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from ..temporal import Trajectory
from .lattice import DEFAULT_RESOLUTION, DesignConfig, build_lattice, probe_points, resolution_for
from .simulate import DEFAULT_FRAME_DT, DEFAULT_FRAMES, DEFAULT_SUBSTEPS, simulate

MAGIC = b"OPDS"
VERSION = 1
SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)

VELOCITY_LEVELS = (-5.0, -3.0, -7.0)      # mm/ms
THICKNESS_LEVELS = (1.0, 0.7, 1.3)
OFFSET_LEVELS = (0.0, 120.0, 240.0)       # mm
SCALE_JITTER = 0.1                        # anisotropic geometric scale drawn from 1 +- this

_CONFIG = struct.Struct("<6dqd")
_U32 = struct.Struct("<I")


class DatasetError(ValueError):
    pass


@dataclass
class Sample:
    config: DesignConfig
    trajectory: Trajectory
    probes: list[int]

    @property
    def key(self) -> str:
        return self.config.key()


@dataclass
class DatasetFile:
    split: str
    dt: float
    samples: list[Sample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(N, T, D, F) shared by every sample."""
        if not self.samples:
            return (0, 0, 3, 0)
        tr = self.samples[0].trajectory
        return (tr.n_points, tr.horizon, tr.positions.shape[2], tr.features.shape[1])


def doe_configs(levels: Sequence[int] = (3, 3, 3), seed: int = 0) -> list[DesignConfig]:
    """Full-factorial sweep over velocity x thickness x offset.

    ``levels`` picks how many entries of each factor list to use (prefixes).
    The geometric scales are anisotropic and drawn per configuration from
    ``seed``, so the sweep is a pure function of ``(levels, seed)``.
    """
    lists = (VELOCITY_LEVELS, THICKNESS_LEVELS, OFFSET_LEVELS)
    if len(levels) != 3:
        raise DatasetError("levels must give three counts (velocity, thickness, offset)")
    for n, lst in zip(levels, lists):
        if not 1 <= n <= len(lst):
            raise DatasetError(f"level count {n} outside 1..{len(lst)}")
    rng = np.random.default_rng(seed)
    out = []
    for v0, tau, off in itertools.product(*(lst[:n] for n, lst in zip(levels, lists))):
        sx, sy, sz = (1.0 + SCALE_JITTER * rng.uniform(-1.0, 1.0, 3)).tolist()
        out.append(DesignConfig(sx, sy, sz, v0=v0, thickness=tau, offset=off, seed=seed))
    return out


def split_counts(n: int, fractions: Sequence[float] = SPLIT_FRACTIONS) -> list[int]:
    """Largest-remainder rounding of ``n * fractions``; ties go to the earlier split."""
    raw = [n * f for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def assign_splits(configs: Sequence[DesignConfig]) -> dict[str, list[DesignConfig]]:
    """Order by configuration hash and cut into train/val/test."""
    ordered = sorted(configs, key=lambda c: c.key())
    counts = split_counts(len(ordered))
    out, start = {}, 0
    for name, k in zip(SPLITS, counts):
        out[name] = ordered[start:start + k]
        start += k
    return out


def make_sample(config: DesignConfig, nodes: int | None = None, frames: int = DEFAULT_FRAMES,
                substeps: int = DEFAULT_SUBSTEPS, frame_dt: float = DEFAULT_FRAME_DT) -> Sample:
    res = DEFAULT_RESOLUTION if nodes is None else resolution_for(nodes)
    lattice = build_lattice(config, res)
    result = simulate(lattice, frames=frames, substeps=substeps, frame_dt=frame_dt)
    return Sample(config, result.trajectory, probe_points(lattice))


def generate_doe(levels: Sequence[int] = (3, 3, 3), nodes: int | None = None, frames: int = DEFAULT_FRAMES,
                 seed: int = 0, substeps: int = DEFAULT_SUBSTEPS,
                 frame_dt: float = DEFAULT_FRAME_DT) -> dict[str, DatasetFile]:
    splits = assign_splits(doe_configs(levels, seed))
    out = {}
    for name in SPLITS:
        samples = [make_sample(c, nodes, frames, substeps, frame_dt) for c in splits[name]]
        dt = samples[0].trajectory.dt if samples else frame_dt
        out[name] = DatasetFile(name, dt, samples)
    return out


# ---------------------------------------------------------------- binary IO

def _f32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def write_dataset(ds: DatasetFile, fh: BinaryIO) -> None:
    n, t, d, f = ds.dims
    tag = ds.split.encode("utf-8")
    fh.write(MAGIC + struct.pack("<5Id", VERSION, n, t, d, f, ds.dt) + _U32.pack(len(tag)) + tag)
    fh.write(_U32.pack(len(ds.samples)))
    for s in ds.samples:
        tr, c = s.trajectory, s.config
        if (tr.n_points, tr.horizon, tr.features.shape[1]) != (n, t, f):
            raise DatasetError("all samples in a file must share N, T and F")
        fh.write(_CONFIG.pack(c.sx, c.sy, c.sz, c.v0, c.thickness, c.offset, c.seed, c.imperfection))
        fh.write(_f32(tr.positions) + _f32(tr.v0) + _f32(tr.features))
        fh.write(_U32.pack(len(s.probes)) + np.asarray(s.probes, dtype="<u4").tobytes())


def _read(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DatasetError("truncated dataset file")
    return buf


def _array(fh: BinaryIO, shape: tuple) -> np.ndarray:
    count = int(np.prod(shape))
    return np.frombuffer(_read(fh, 4 * count), dtype="<f4").reshape(shape).astype(np.float32)


def read_dataset(fh: BinaryIO) -> DatasetFile:
    if _read(fh, 4) != MAGIC:
        raise DatasetError("not an OPDS file (bad magic)")
    version, n, t, d, f, dt = struct.unpack("<5Id", _read(fh, 28))
    if version != VERSION:
        raise DatasetError(f"unsupported OPDS version {version}")
    (tag_len,) = _U32.unpack(_read(fh, 4))
    split = _read(fh, tag_len).decode("utf-8")
    (count,) = _U32.unpack(_read(fh, 4))
    samples = []
    for _ in range(count):
        sx, sy, sz, v0, tau, off, seed, imp = _CONFIG.unpack(_read(fh, _CONFIG.size))
        config = DesignConfig(sx, sy, sz, v0=v0, thickness=tau, offset=off, seed=seed, imperfection=imp)
        pos = _array(fh, (t + 1, n, d))
        vel = _array(fh, (n, d))
        feats = _array(fh, (n, f))
        (np_,) = _U32.unpack(_read(fh, 4))
        probes = np.frombuffer(_read(fh, 4 * np_), dtype="<u4").astype(np.int64).tolist()
        traj = Trajectory(pos, vel, dt, feats, config.globals_vector(), config.bc_vector())
        samples.append(Sample(config, traj, probes))
    return DatasetFile(split, dt, samples)


def to_bytes(ds: DatasetFile) -> bytes:
    buf = io.BytesIO()
    write_dataset(ds, buf)
    return buf.getvalue()


def from_bytes(data: bytes) -> DatasetFile:
    return read_dataset(io.BytesIO(data))


def split_path(root: Path | str, split: str) -> Path:
    return Path(root) / f"{split}.opds"


def save_splits(files: dict[str, DatasetFile], root: Path | str) -> dict[str, str]:
    """Write one file per split; returns split -> sha256 of the bytes written."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    digests = {}
    for name, ds in files.items():
        data = to_bytes(ds)
        split_path(root, name).write_bytes(data)
        digests[name] = hashlib.sha256(data).hexdigest()
    return digests


def load_split(root: Path | str, split: str) -> DatasetFile:
    path = split_path(root, split)
    if not path.exists():
        raise FileNotFoundError(f"missing split file {path}")
    with open(path, "rb") as fh:
        return read_dataset(fh)


def manifest_record(files: dict[str, DatasetFile], digests: dict[str, str], **inputs) -> dict:
    return {
        "inputs": inputs,
        "splits": {
            name: {
                "file": split_path("", name).name,
                "sha256": digests.get(name, ""),
                "count": len(ds),
                "configs": [
                    {"key": s.key[:16], "v0": s.config.v0, "thickness": s.config.thickness,
                     "offset": s.config.offset, "scale": [s.config.sx, s.config.sy, s.config.sz],
                     "probes": s.probes}
                    for s in ds.samples
                ],
            }
            for name, ds in files.items()
        },
    }


def write_manifest(path: Path | str, record: dict) -> None:
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
