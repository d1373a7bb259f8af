"""Curved three-layer beam lattice struck by a cylindrical rigid wall.

Units: mm, ms, kg. Forces come out in kN and energies in J (kN*mm).
"""
from __future__ import annotations

import hashlib
import itertools
import struct
from dataclasses import dataclass, field

import numpy as np

# nominal template
BEAM_LENGTH = 1000.0     # along y
BEAM_HEIGHT = 100.0      # along z
LAYER_GAP = 40.0         # along x, between the three layers
BOW = 60.0               # setback of the beam ends relative to the nose
WALL_RADIUS = 127.0      # 254 mm impactor diameter
WALL_GAP = 2.0
REF_LENGTH = 25.0        # length at which an element has stiffness K_UNIT

K_UNIT = 30.0            # kN/mm
YIELD_FORCE = 3.0        # kN
HARDENING_RATIO = 0.05   # post-yield tangent / elastic stiffness
DAMPING_TIME = 5e-4      # ms, dashpot coefficient = DAMPING_TIME * k
BEAM_MASS = 6.0          # kg at thickness 1.0
MOUNT_MASS = 20.0        # kg lumped on the rear-face ends
MOUNT_FRACTION = 0.2     # fraction of the length (at each end) carrying mount mass
CONTACT_STIFFNESS = 100.0  # kN/mm

DEFAULT_RESOLUTION = (43, 4, 3)


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class DesignConfig:
    """One crash configuration.

    ``seed`` drives an optional nodal imperfection (``imperfection`` mm,
    default 0) used to trigger asymmetric buckling; with zero amplitude the
    build is seed-independent.
    """

    sx: float = 1.0
    sy: float = 1.0
    sz: float = 1.0
    v0: float = -5.0
    thickness: float = 1.0
    offset: float = 0.0
    seed: int = 0
    imperfection: float = field(default=0.0, compare=True)

    def __post_init__(self):
        if min(self.sx, self.sy, self.sz) <= 0:
            raise LatticeError("geometric scales must be positive")
        if self.v0 > 0:
            raise LatticeError("impact velocity must point toward the wall (v0 < 0)")
        if self.thickness <= 0:
            raise LatticeError("thickness scale must be positive")

    def key(self) -> str:
        packed = struct.pack("<6dqd", self.sx, self.sy, self.sz, self.v0, self.thickness, self.offset,
                             self.seed, self.imperfection)
        return hashlib.sha256(packed).hexdigest()

    def globals_vector(self) -> np.ndarray:
        return np.array([self.v0, self.thickness, self.sx, self.sy, self.sz])

    def bc_vector(self) -> np.ndarray:
        return np.array([self.offset, WALL_RADIUS])


@dataclass
class BeamLattice:
    positions: np.ndarray        # N x 3
    elements: np.ndarray         # E x 2, int64
    rest_length: np.ndarray      # E
    stiffness: np.ndarray        # E
    yield_force: np.ndarray      # E
    hardening: np.ndarray        # E, post-yield hardening modulus
    damping: np.ndarray          # E
    masses: np.ndarray           # N
    wall: np.ndarray             # [x_center, y_center, radius, contact_stiffness]
    resolution: tuple
    config: DesignConfig

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def n_elements(self) -> int:
        return len(self.elements)


def node_id(i: int, j: int, k: int, res: tuple) -> int:
    _, nh, nl = res
    return (i * nh + j) * nl + k


def element_count(res: tuple) -> int:
    """Axial edges plus both diagonals of every grid face."""
    a, b, c = res
    axial = (a - 1) * b * c + a * (b - 1) * c + a * b * (c - 1)
    diag = 2 * ((a - 1) * (b - 1) * c + (a - 1) * b * (c - 1) + a * (b - 1) * (c - 1))
    return axial + diag


def _element_pairs(res: tuple) -> np.ndarray:
    a, b, c = res
    idx = np.arange(a * b * c).reshape(a, b, c)
    pairs = [
        (idx[:-1, :, :], idx[1:, :, :]),
        (idx[:, :-1, :], idx[:, 1:, :]),
        (idx[:, :, :-1], idx[:, :, 1:]),
        # face diagonals, both orientations
        (idx[:-1, :-1, :], idx[1:, 1:, :]), (idx[1:, :-1, :], idx[:-1, 1:, :]),
        (idx[:-1, :, :-1], idx[1:, :, 1:]), (idx[1:, :, :-1], idx[:-1, :, 1:]),
        (idx[:, :-1, :-1], idx[:, 1:, 1:]), (idx[:, 1:, :-1], idx[:, :-1, 1:]),
    ]
    return np.concatenate([np.stack([p.ravel(), q.ravel()], axis=1) for p, q in pairs]).astype(np.int64)


def template_positions(res: tuple) -> np.ndarray:
    a, b, c = res
    y = np.linspace(-BEAM_LENGTH / 2, BEAM_LENGTH / 2, a)
    z = np.linspace(-BEAM_HEIGHT / 2, BEAM_HEIGHT / 2, b)
    xl = LAYER_GAP * np.arange(c)
    pos = np.empty((a, b, c, 3))
    for i, j, k in itertools.product(range(a), range(b), range(c)):
        u = 2 * y[i] / BEAM_LENGTH
        pos[i, j, k] = (xl[k] + BOW * u * u, y[i], z[j])
    pos = pos.reshape(-1, 3)
    pos[:, 0] -= (LAYER_GAP * (c - 1) + BOW) / 2
    return pos


def template_box(res: tuple = DEFAULT_RESOLUTION) -> np.ndarray:
    half_x = (LAYER_GAP * (res[2] - 1) + BOW) / 2
    return np.array([[-half_x, -BEAM_LENGTH / 2, -BEAM_HEIGHT / 2], [half_x, BEAM_LENGTH / 2, BEAM_HEIGHT / 2]])


def resolution_for(nodes: int, height: int = 4, layers: int = 3) -> tuple:
    return (max(2, int(round(nodes / (height * layers)))), height, layers)


def build_lattice(config: DesignConfig, resolution: tuple = DEFAULT_RESOLUTION) -> BeamLattice:
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != 3 or min(resolution) < 2:
        raise LatticeError(f"resolution needs >= 2 nodes per side, got {resolution}")
    pos = template_positions(resolution) * np.array([config.sx, config.sy, config.sz])
    if config.imperfection:
        rng = np.random.default_rng(config.seed)
        pos = pos + rng.normal(scale=config.imperfection, size=pos.shape)
    elems = _element_pairs(resolution)
    rest = np.linalg.norm(pos[elems[:, 1]] - pos[elems[:, 0]], axis=1)
    tau = config.thickness
    k = K_UNIT * tau * REF_LENGTH / rest
    fy = np.full(len(elems), YIELD_FORCE * tau)
    kh = k * HARDENING_RATIO / (1.0 - HARDENING_RATIO)
    damp = DAMPING_TIME * k

    n = len(pos)
    masses = np.full(n, BEAM_MASS * tau / n)
    a, _, c = resolution
    ii = np.arange(n) // (resolution[1] * c)
    kk = np.arange(n) % c
    n_end = max(1, int(round(MOUNT_FRACTION * a)))
    mount = (kk == c - 1) & ((ii < n_end) | (ii >= a - n_end))
    masses[mount] += MOUNT_MASS / mount.sum()

    wall = _place_wall(pos, config.offset)
    return BeamLattice(pos, elems, rest, k, fy, kh, damp, masses, wall, resolution, config)


def _place_wall(pos: np.ndarray, offset: float) -> np.ndarray:
    dy = pos[:, 1] - offset
    inside = np.abs(dy) < WALL_RADIUS
    if not inside.any():
        x_c = pos[:, 0].min() - WALL_RADIUS - WALL_GAP
    else:
        reach = np.sqrt(WALL_RADIUS ** 2 - dy[inside] ** 2)
        x_c = (pos[inside, 0] - reach).min() - WALL_GAP
    return np.array([x_c, offset, WALL_RADIUS, CONTACT_STIFFNESS])


def probe_points(lattice: BeamLattice) -> list[int]:
    """Two rear-face nodes mirrored about the impact axis (y = 0).

    Taken a quarter of the length in from each end, at the height row nearest
    mid-height, on the layer farthest from the wall.
    """
    a, b, c = lattice.resolution
    i0 = (a - 1) // 4
    j = (b - 1) // 2
    return [node_id(i0, j, c - 1, lattice.resolution), node_id(a - 1 - i0, j, c - 1, lattice.resolution)]
