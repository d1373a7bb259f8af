"""Neighborhood queries, multi-scale geometric features and the context projector."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .numcore import MLP, Module, Tensor, concat

DEFAULT_SCALES = ((0.05, 8), (0.25, 32))
DEFAULT_ANCHORS = 32


@dataclass
class PointCloud:
    positions: np.ndarray                 # N x 3
    features: np.ndarray = None           # N x F

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3 or len(self.positions) < 1:
            raise ValueError("positions must be N x 3 with N >= 1")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")
        if self.features is None:
            self.features = np.zeros((len(self.positions), 0))
        self.features = np.asarray(self.features, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.positions)

    def normalized(self) -> "PointCloud":
        """Shift to the bounding-box corner and scale by the largest extent."""
        return PointCloud(unit_box(self.positions), self.features)

    def permuted(self, perm: np.ndarray) -> "PointCloud":
        return PointCloud(self.positions[perm], self.features[perm])


def unit_box(positions: np.ndarray) -> np.ndarray:
    lo = positions.min(axis=0)
    extent = float((positions.max(axis=0) - lo).max())
    return (positions - lo) / (extent if extent > 0 else 1.0)


@dataclass
class BallQueryResult:
    indices: np.ndarray    # N x cap, -1 padded, nearest first
    counts: np.ndarray     # N
    radius: float
    cap: int

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[i, : self.counts[i]]


def ball_query(cloud: PointCloud | np.ndarray, radius: float, cap: int) -> BallQueryResult:
    """Up to ``cap`` neighbors within ``radius`` of every point, nearest first.

    Ties in distance go to the lower index; a point is always its own
    neighbor, so isolated points return just themselves.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    pts = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    idx, counts = kernels.ball_query(pts, float(radius), int(cap))
    return BallQueryResult(idx, counts, float(radius), int(cap))


def scale_features(cloud: PointCloud, result: BallQueryResult) -> np.ndarray:
    """Per point: centroid offset (3), mean distance (1), fill ratio (1), pooled features (F)."""
    pos, feats = cloud.positions, cloud.features
    n = len(pos)
    mask = result.indices >= 0
    safe = np.where(mask, result.indices, 0)
    w = mask / result.counts[:, None]
    nbr = pos[safe]                                  # N x cap x 3
    centroid = (nbr * w[..., None]).sum(axis=1)
    dist = np.sqrt(((nbr - pos[:, None, :]) ** 2).sum(axis=2))
    mean_dist = (dist * w).sum(axis=1, keepdims=True)
    fill = (result.counts / result.cap)[:, None]
    pooled = (feats[safe] * w[..., None]).sum(axis=1) if feats.shape[1] else np.zeros((n, 0))
    return np.concatenate([centroid - pos, mean_dist, fill, pooled], axis=1)


def multiscale_features(cloud: PointCloud, scales: Sequence[tuple[float, int]] = DEFAULT_SCALES) -> np.ndarray:
    """``[position, features, per-scale block...]`` with width 3 + F + sum(5 + F)."""
    if not scales:
        raise ValueError("need at least one (radius, cap) scale")
    blocks = [cloud.positions, cloud.features]
    for radius, cap in scales:
        blocks.append(scale_features(cloud, ball_query(cloud, radius, cap)))
    return np.concatenate(blocks, axis=1)


def augmented_width(n_features: int, n_scales: int) -> int:
    return 3 + n_features + n_scales * (5 + n_features)


def lexicographic_order(positions: np.ndarray) -> np.ndarray:
    return np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0]))


def farthest_point_sample(positions: np.ndarray, count: int) -> np.ndarray:
    """Anchors chosen greedily by farthest distance, seeded from the first sorted point.

    Points are visited in lexicographic coordinate order, so the selection
    does not depend on the input ordering. The seed point itself is only
    selected if it becomes the farthest point later. Returns original indices.
    """
    order = lexicographic_order(positions)
    pts = positions[order]
    count = min(count, len(pts))
    d = ((pts - pts[0]) ** 2).sum(axis=1)
    chosen = np.empty(count, dtype=np.int64)
    for c in range(count):
        j = int(np.argmax(d))
        chosen[c] = j
        d = np.minimum(d, ((pts - pts[j]) ** 2).sum(axis=1))
    return order[chosen]


@dataclass
class ContextBank:
    tokens: Tensor                          # (anchors + 2) x D
    provenance: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.tokens.shape[0]


class ContextProjector(Module):
    """Geometry anchors + global-parameter token + boundary-condition token.

    ``calls`` counts projections so callers can check that context is built
    once per trajectory and shared by every block.
    """

    def __init__(self, n_features: int, n_globals: int, n_bc: int, width: int, rng: np.random.Generator,
                 scales: Sequence[tuple[float, int]] = DEFAULT_SCALES, anchors: int = DEFAULT_ANCHORS):
        self.scales = tuple((float(r), int(c)) for r, c in scales)
        self.anchors = anchors
        self.geometry = MLP((augmented_width(n_features, len(self.scales)), width, width), rng)
        self.globals_mlp = MLP((n_globals, width, width), rng)
        self.bc_mlp = MLP((n_bc, width, width), rng)
        self.calls = 0

    def anchor_indices(self, cloud: PointCloud) -> np.ndarray:
        return farthest_point_sample(cloud.positions, self.anchors)

    def __call__(self, cloud: PointCloud, globals_vec: np.ndarray, bc: np.ndarray,
                 augmented: np.ndarray | None = None) -> ContextBank:
        self.calls += 1
        unit = cloud.normalized()
        if augmented is None:
            augmented = multiscale_features(unit, self.scales)
        idx = self.anchor_indices(unit)
        geo = self.geometry(Tensor(augmented[idx]))
        g = self.globals_mlp(Tensor(np.asarray(globals_vec).reshape(1, -1)))
        b = self.bc_mlp(Tensor(np.asarray(bc).reshape(1, -1)))
        tokens = concat([geo, g, b], axis=0)
        return ContextBank(tokens, ["geometry"] * len(idx) + ["global", "boundary"])


def project_context(projector: ContextProjector, cloud: PointCloud, globals_vec, bc) -> ContextBank:
    return projector(cloud, globals_vec, bc)
