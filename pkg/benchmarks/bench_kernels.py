"""Compiled kernels versus the numpy fallback: wall time and agreement.

    python3 benchmarks/bench_kernels.py [--points 2000] [--repeat 3]
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from opcrash import kernels
from opcrash.crashdata import DesignConfig, build_lattice
from opcrash.crashdata.simulate import DEFAULT_FRAME_DT, DEFAULT_SUBSTEPS


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if kernels.BACKEND != "cython":
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    from opcrash.kernels import _core, fallback

    report = {}
    pts = np.random.default_rng(0).random((args.points, 3))
    for radius, cap in ((0.05, 8), (0.25, 32)):
        tc, (ic, cc) = best_of(lambda: _core.ball_query(pts, radius, cap), args.repeat)
        tf, (if_, cf) = best_of(lambda: fallback.ball_query(pts, radius, cap), args.repeat)
        report[f"ball_query r={radius} cap={cap}"] = {
            "cython_s": tc, "numpy_s": tf, "speedup": tf / tc,
            "identical": bool(np.array_equal(ic, if_) and np.array_equal(cc, cf)),
        }

    lat = build_lattice(DesignConfig(v0=-7.0))
    vel = np.zeros_like(lat.positions)
    vel[:, 0] = -7.0
    call = (lat.positions, vel, lat.masses, lat.elements, lat.rest_length, lat.stiffness, lat.yield_force,
            lat.hardening, lat.damping, lat.wall, DEFAULT_FRAME_DT / DEFAULT_SUBSTEPS, DEFAULT_SUBSTEPS, args.frames)
    tc, oc = best_of(lambda: _core.simulate_lattice(*call), 1)
    tf, of = best_of(lambda: fallback.simulate_lattice(*call), 1)
    report["simulate_lattice"] = {
        "cython_s": tc, "numpy_s": tf, "speedup": tf / tc,
        "max_abs_diff_mm": float(np.abs(oc[0] - of[0]).max()),
    }
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
