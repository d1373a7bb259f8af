# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: grid-hashed ball query and the lattice integrator."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

from .fallback import cell_keys


cdef inline Py_ssize_t _find(const long long[::1] keys, Py_ssize_t nkeys, long long key) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = nkeys, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < nkeys and keys[lo] == key:
        return lo
    return -1


def ball_query(points, double radius, Py_ssize_t cap):
    """Compiled twin of :func:`opcrash.kernels.fallback.ball_query`."""
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    coords_np, dims_np = cell_keys(np.asarray(pts), radius)
    cdef long long[:, ::1] coords = np.ascontiguousarray(coords_np, dtype=np.int64)
    cdef long long d1 = dims_np[1], d2 = dims_np[2], d0 = dims_np[0]
    keys_np = (coords_np[:, 0] * d1 + coords_np[:, 1]) * d2 + coords_np[:, 2]
    order_np = np.argsort(keys_np, kind="stable").astype(np.int64)
    uniq_np, starts_np = np.unique(keys_np[order_np], return_index=True)
    cdef long long[::1] order = order_np
    cdef long long[::1] uniq = np.ascontiguousarray(uniq_np, dtype=np.int64)
    cdef long long[::1] starts = np.append(starts_np, n).astype(np.int64)
    cdef Py_ssize_t nkeys = uniq.shape[0]

    out_np = np.full((n, cap), -1, dtype=np.int64)
    counts_np = np.zeros(n, dtype=np.int64)
    cdef long long[:, ::1] out = out_np
    cdef long long[::1] counts = counts_np
    best_d_np = np.empty(cap, dtype=np.float64)
    cdef double[::1] best_d = best_d_np
    cdef double r2 = radius * radius
    cdef Py_ssize_t i, q, s, e, m, pos, slot
    cdef long long cx, cy, cz, x, y, z, ci
    cdef int a, b, c
    cdef double dx, dy, dz, dd
    with nogil:
        for i in range(n):
            m = 0
            cx = coords[i, 0]; cy = coords[i, 1]; cz = coords[i, 2]
            for a in range(-1, 2):
                x = cx + a
                if x < 0 or x >= d0:
                    continue
                for b in range(-1, 2):
                    y = cy + b
                    if y < 0 or y >= d1:
                        continue
                    for c in range(-1, 2):
                        z = cz + c
                        if z < 0 or z >= d2:
                            continue
                        pos = _find(uniq, nkeys, (x * d1 + y) * d2 + z)
                        if pos < 0:
                            continue
                        for s in range(starts[pos], starts[pos + 1]):
                            q = order[s]
                            dx = pts[q, 0] - pts[i, 0]
                            dy = pts[q, 1] - pts[i, 1]
                            dz = pts[q, 2] - pts[i, 2]
                            dd = dx * dx + dy * dy + dz * dz
                            if dd > r2:
                                continue
                            # insertion into the bounded (distance, index) list
                            if m == cap and (dd > best_d[m - 1] or (dd == best_d[m - 1] and q > out[i, m - 1])):
                                continue
                            slot = m if m < cap else cap - 1
                            while slot > 0 and (best_d[slot - 1] > dd or (best_d[slot - 1] == dd and out[i, slot - 1] > q)):
                                if slot < cap:
                                    best_d[slot] = best_d[slot - 1]
                                    out[i, slot] = out[i, slot - 1]
                                slot -= 1
                            best_d[slot] = dd
                            out[i, slot] = q
                            if m < cap:
                                m += 1
            counts[i] = m
    return out_np, counts_np


def simulate_lattice(x0, v0, masses, elements, rest, stiffness, yield_force, hardening, damping, wall,
                     double dt, Py_ssize_t substeps, Py_ssize_t frames):
    """Compiled twin of :func:`opcrash.kernels.fallback.simulate_lattice`."""
    x_np = np.array(x0, dtype=np.float64, order="C")
    v_np = np.array(v0, dtype=np.float64, order="C")
    cdef double[:, ::1] x = x_np
    cdef double[:, ::1] v = v_np
    cdef const double[::1] mass = np.ascontiguousarray(masses, dtype=np.float64)
    cdef const long long[:, ::1] el = np.ascontiguousarray(elements, dtype=np.int64)
    cdef const double[::1] L0 = np.ascontiguousarray(rest, dtype=np.float64)
    cdef const double[::1] k = np.ascontiguousarray(stiffness, dtype=np.float64)
    cdef const double[::1] fy = np.ascontiguousarray(yield_force, dtype=np.float64)
    cdef const double[::1] kh = np.ascontiguousarray(hardening, dtype=np.float64)
    cdef const double[::1] cd = np.ascontiguousarray(damping, dtype=np.float64)
    cdef double wx = wall[0], wy = wall[1], wr = wall[2], kc = wall[3]
    cdef Py_ssize_t n = x.shape[0], ne = el.shape[0]

    p_np = np.zeros(ne)
    alpha_np = np.zeros(ne)
    force_np = np.zeros((n, 3))
    cdef double[::1] p = p_np
    cdef double[::1] alpha = alpha_np
    cdef double[:, ::1] F = force_np

    xs = np.empty((frames + 1, n, 3))
    vs = np.empty((frames + 1, n, 3))
    ps = np.empty((frames + 1, ne))
    alphas = np.empty((frames + 1, ne))
    energy_np = np.empty((frames + 1, 5))
    cdef double[:, ::1] energy = energy_np

    cdef double w_plastic = 0.0, w_damp = 0.0, max_pen = 0.0
    cdef Py_ssize_t f, s, e, i, j, a
    cdef double d0, d1, d2, length, n0, n1, n2, f_tr, f_y, excess, dg, sg, force, vrel, axial
    cdef double rx, ry, dist, pen, scale, ke, el_e, ct_e, ee

    for f in range(frames + 1):
        if f > 0:
            with nogil:
                for s in range(substeps):
                    for i in range(n):
                        F[i, 0] = 0.0; F[i, 1] = 0.0; F[i, 2] = 0.0
                    for e in range(ne):
                        i = el[e, 0]; j = el[e, 1]
                        d0 = x[j, 0] - x[i, 0]; d1 = x[j, 1] - x[i, 1]; d2 = x[j, 2] - x[i, 2]
                        length = sqrt(d0 * d0 + d1 * d1 + d2 * d2)
                        n0 = d0 / length; n1 = d1 / length; n2 = d2 / length
                        f_tr = k[e] * (length - L0[e] - p[e])
                        f_y = fy[e] + kh[e] * alpha[e]
                        excess = fabs(f_tr) - f_y
                        dg = excess / (k[e] + kh[e]) if excess > 0.0 else 0.0
                        sg = 1.0 if f_tr > 0.0 else (-1.0 if f_tr < 0.0 else 0.0)
                        w_plastic += dg * (f_y + 0.5 * kh[e] * dg)
                        p[e] += sg * dg
                        alpha[e] += dg
                        force = f_tr - k[e] * sg * dg
                        vrel = (v[j, 0] - v[i, 0]) * n0 + (v[j, 1] - v[i, 1]) * n1 + (v[j, 2] - v[i, 2]) * n2
                        w_damp += cd[e] * vrel * vrel * dt
                        axial = force + cd[e] * vrel
                        F[i, 0] += axial * n0; F[i, 1] += axial * n1; F[i, 2] += axial * n2
                        F[j, 0] -= axial * n0; F[j, 1] -= axial * n1; F[j, 2] -= axial * n2
                    for i in range(n):
                        rx = x[i, 0] - wx; ry = x[i, 1] - wy
                        dist = sqrt(rx * rx + ry * ry)
                        pen = wr - dist
                        if pen > 0.0:
                            if pen > max_pen:
                                max_pen = pen
                            scale = kc * pen / dist
                            F[i, 0] += scale * rx
                            F[i, 1] += scale * ry
                        for a in range(3):
                            v[i, a] += dt * F[i, a] / mass[i]
                            x[i, a] += dt * v[i, a]
        xs[f] = x_np
        vs[f] = v_np
        ps[f] = p_np
        alphas[f] = alpha_np
        ke = 0.0; el_e = 0.0; ct_e = 0.0
        for i in range(n):
            ke += 0.5 * mass[i] * (v[i, 0] * v[i, 0] + v[i, 1] * v[i, 1] + v[i, 2] * v[i, 2])
            rx = x[i, 0] - wx; ry = x[i, 1] - wy
            pen = wr - sqrt(rx * rx + ry * ry)
            if pen > 0.0:
                ct_e += 0.5 * kc * pen * pen
        for e in range(ne):
            i = el[e, 0]; j = el[e, 1]
            d0 = x[j, 0] - x[i, 0]; d1 = x[j, 1] - x[i, 1]; d2 = x[j, 2] - x[i, 2]
            ee = sqrt(d0 * d0 + d1 * d1 + d2 * d2) - L0[e] - p[e]
            el_e += 0.5 * k[e] * ee * ee
        energy[f, 0] = ke; energy[f, 1] = el_e; energy[f, 2] = ct_e
        energy[f, 3] = w_plastic; energy[f, 4] = w_damp
    return xs, vs, ps, alphas, energy_np, max_pen
