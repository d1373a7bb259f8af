"""Per-channel z-score statistics from the training split."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .dataset import Sample

STD_FLOOR = 1e-8
GROUPS = ("position", "features", "globals", "bc")


@dataclass
class ChannelStats:
    """Running mean / second moment per channel (Chan et al. pairwise merge)."""

    count: int = 0
    mean: np.ndarray | None = None
    m2: np.ndarray | None = None

    def update(self, rows: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, np.shape(rows)[-1])
        n_b = len(rows)
        if n_b == 0:
            return
        mean_b = rows.mean(axis=0)
        m2_b = ((rows - mean_b) ** 2).sum(axis=0)
        if self.count == 0:
            self.count, self.mean, self.m2 = n_b, mean_b, m2_b
            return
        n = self.count + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / n)
        self.m2 = self.m2 + m2_b + delta * delta * (self.count * n_b / n)
        self.count = n

    def finalize(self) -> tuple[np.ndarray, np.ndarray]:
        std = np.sqrt(self.m2 / self.count)
        # zero-variance channels keep their offset but are not rescaled
        std = np.where(std > STD_FLOOR, std, 1.0)
        return self.mean.astype(np.float32), std.astype(np.float32)


@dataclass
class NormStats:
    """Means and standard deviations per group, stored as 32-bit floats.

    ``accel_scale`` is the standard deviation of training accelerations in
    normalized position units (scales the autoregressive head output).
    """

    mean: dict[str, np.ndarray] = field(default_factory=dict)
    std: dict[str, np.ndarray] = field(default_factory=dict)
    accel_scale: float = 1.0

    def apply(self, group: str, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean[group]) / self.std[group]

    def invert(self, group: str, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std[group] + self.mean[group]

    def scale(self, group: str, dx: np.ndarray) -> np.ndarray:
        """Normalize a difference (velocity, displacement): no offset."""
        return np.asarray(dx, dtype=np.float64) / self.std[group]

    def blobs(self) -> dict[str, np.ndarray]:
        out = {}
        for g in self.mean:
            out[f"stats.{g}.mean"] = self.mean[g]
            out[f"stats.{g}.std"] = self.std[g]
        out["stats.accel_scale"] = np.array([self.accel_scale], dtype=np.float32)
        return out

    @classmethod
    def from_blobs(cls, blobs: dict[str, np.ndarray]) -> "NormStats":
        st = cls()
        for name, arr in blobs.items():
            parts = name.split(".")
            if len(parts) == 3 and parts[0] == "stats":
                getattr(st, parts[2])[parts[1]] = np.asarray(arr, dtype=np.float32)
        if "stats.accel_scale" in blobs:
            st.accel_scale = float(np.float32(blobs["stats.accel_scale"][0]))
        return st


def normalize_stats(samples: Iterable[Sample]) -> NormStats:
    """Per-channel mean/std over every frame and node of the training samples."""
    acc = {g: ChannelStats() for g in GROUPS}
    acc_sq, acc_n = 0.0, 0
    samples = list(samples)
    if not samples:
        raise ValueError("normalization needs at least one training sample")
    for s in samples:
        tr = s.trajectory
        acc["position"].update(tr.positions)
        acc["features"].update(tr.features)
        acc["globals"].update(np.asarray(tr.globals).reshape(1, -1))
        acc["bc"].update(np.asarray(tr.bc).reshape(1, -1))
    st = NormStats()
    for g in GROUPS:
        st.mean[g], st.std[g] = acc[g].finalize()
    for s in samples:
        tr = s.trajectory
        if tr.horizon >= 2:
            x = np.asarray(tr.positions, dtype=np.float64) / st.std["position"]
            a = (x[2:] - 2 * x[1:-1] + x[:-2]) / tr.dt ** 2
            acc_sq += float((a * a).sum())
            acc_n += a.size
    rms = np.sqrt(acc_sq / acc_n) if acc_n else 0.0
    st.accel_scale = float(np.float32(rms if rms > STD_FLOOR else 1.0))
    return st
