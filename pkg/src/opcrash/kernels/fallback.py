"""Pure numpy implementations of the hot kernels.

Selected automatically when the compiled extension is unavailable, or forced
with ``OPCRASH_PURE=1``. Results agree with the compiled path to rounding.
"""
from __future__ import annotations

import numpy as np

GRID_MAX = 1 << 20


def cell_keys(points: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Integer grid coordinates with cell edge >= radius, plus grid dims."""
    lo = points.min(axis=0)
    extent = float((points.max(axis=0) - lo).max())
    if not np.isfinite(radius) or radius >= extent:
        coords = np.zeros_like(points, dtype=np.int64)
        return coords, np.ones(3, dtype=np.int64)
    cell = max(radius, extent / GRID_MAX)
    coords = np.floor((points - lo) / cell).astype(np.int64)
    return coords, coords.max(axis=0) + 1


def ball_query(points: np.ndarray, radius: float, cap: int) -> tuple[np.ndarray, np.ndarray]:
    """Up to ``cap`` neighbors within ``radius`` per point, nearest first.

    Ties in distance break toward the lower index. Returns an N x cap index
    array padded with -1 and the per-point neighbor counts.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n = len(pts)
    r2 = radius * radius
    coords, dims = cell_keys(pts, radius)
    keys = (coords[:, 0] * dims[1] + coords[:, 1]) * dims[2] + coords[:, 2]
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    uniq, starts = np.unique(sorted_keys, return_index=True)
    ends = np.append(starts[1:], n)
    lookup = {int(k): (int(s), int(e)) for k, s, e in zip(uniq, starts, ends)}

    out = np.full((n, cap), -1, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    offsets = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)]
    for key, (s, e) in lookup.items():
        members = order[s:e]
        cx, cy, cz = coords[members[0]]
        cand = []
        for dx, dy, dz in offsets:
            x, y, z = cx + dx, cy + dy, cz + dz
            if min(x, y, z) < 0 or x >= dims[0] or y >= dims[1] or z >= dims[2]:
                continue
            span = lookup.get(int((x * dims[1] + y) * dims[2] + z))
            if span is not None:
                cand.append(order[span[0]:span[1]])
        cand = np.concatenate(cand)
        diff_x = pts[cand, 0][None, :] - pts[members, 0][:, None]
        diff_y = pts[cand, 1][None, :] - pts[members, 1][:, None]
        diff_z = pts[cand, 2][None, :] - pts[members, 2][:, None]
        d2 = diff_x * diff_x + diff_y * diff_y + diff_z * diff_z
        for row, p in enumerate(members):
            ok = d2[row] <= r2
            idx = cand[ok]
            dd = d2[row][ok]
            sel = np.lexsort((idx, dd))[:cap]
            counts[p] = len(sel)
            out[p, :len(sel)] = idx[sel]
    return out, counts


def simulate_lattice(x0, v0, masses, elements, rest, stiffness, yield_force, hardening, damping, wall,
                     dt, substeps, frames):
    """Semi-implicit Euler integration of the elastoplastic lattice.

    Returns positions and velocities at every output frame, per-element plastic
    state (rest-length offset and accumulated plastic slip), the energy ledger
    [kinetic, elastic, contact, plastic work, damping work] and the deepest
    wall penetration seen at any substep.
    """
    x = np.array(x0, dtype=np.float64)
    v = np.array(v0, dtype=np.float64)
    n = len(x)
    ei, ej = elements[:, 0], elements[:, 1]
    inv_m = 1.0 / masses
    k, fy, kh, c = stiffness, yield_force, hardening, damping
    wx, wy, wr, kc = (float(w) for w in wall)
    p = np.zeros(len(elements))
    alpha = np.zeros(len(elements))
    w_plastic = 0.0
    w_damp = 0.0
    max_pen = 0.0

    xs = np.empty((frames + 1, n, 3))
    vs = np.empty((frames + 1, n, 3))
    ps = np.empty((frames + 1, len(elements)))
    alphas = np.empty((frames + 1, len(elements)))
    energy = np.empty((frames + 1, 5))

    def record(f):
        xs[f], vs[f], ps[f], alphas[f] = x, v, p, alpha
        d = x[ej] - x[ei]
        length = np.sqrt((d * d).sum(axis=1))
        e = length - rest - p
        rx, ry = x[:, 0] - wx, x[:, 1] - wy
        pen = np.maximum(wr - np.sqrt(rx * rx + ry * ry), 0.0)
        energy[f] = (0.5 * (masses * (v * v).sum(axis=1)).sum(), 0.5 * (k * e * e).sum(),
                     0.5 * kc * (pen * pen).sum(), w_plastic, w_damp)

    record(0)
    for f in range(1, frames + 1):
        for _ in range(substeps):
            d = x[ej] - x[ei]
            length = np.sqrt((d * d).sum(axis=1))
            nrm = d / length[:, None]
            f_tr = k * (length - rest - p)
            f_yield = fy + kh * alpha
            excess = np.abs(f_tr) - f_yield
            dg = np.where(excess > 0.0, excess / (k + kh), 0.0)
            sg = np.sign(f_tr)
            w_plastic += float((dg * (f_yield + 0.5 * kh * dg)).sum())
            p += sg * dg
            alpha += dg
            force = f_tr - k * sg * dg
            dv = v[ej] - v[ei]
            vrel = (dv * nrm).sum(axis=1)
            w_damp += float((c * vrel * vrel).sum()) * dt
            axial = (force + c * vrel)[:, None] * nrm
            total = np.empty((n, 3))
            for a in range(3):
                total[:, a] = (np.bincount(ei, axial[:, a], minlength=n)
                               - np.bincount(ej, axial[:, a], minlength=n))
            rx, ry = x[:, 0] - wx, x[:, 1] - wy
            dist = np.sqrt(rx * rx + ry * ry)
            pen = wr - dist
            hit = pen > 0.0
            if hit.any():
                max_pen = max(max_pen, float(pen[hit].max()))
                scale = kc * pen[hit] / dist[hit]
                total[hit, 0] += scale * rx[hit]
                total[hit, 1] += scale * ry[hit]
            v += dt * total * inv_m[:, None]
            x += dt * v
        record(f)
    return xs, vs, ps, alphas, energy, max_pen
