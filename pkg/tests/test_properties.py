import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from opcrash.crashdata import ChannelStats, split_counts
from opcrash.geo import ball_query
from opcrash.numcore import Tensor, precision, softmax
from opcrash.temporal import euler_step, relative_l2

finite = st.floats(-1e3, 1e3, allow_nan=False, width=64)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=finite))
def test_softmax_rows_sum_to_one(x):
    with precision(np.float64):
        y = softmax(Tensor(x), axis=-1).data
    assert np.all(y >= 0) and np.allclose(y.sum(axis=-1), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 500))
def test_split_counts_partition(n):
    c = split_counts(n)
    assert sum(c) == n and all(x >= 0 for x in c) and c[0] >= c[1] >= 0


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (30, 3), elements=st.floats(0, 1, width=64)),
       st.floats(0.01, 0.8), st.integers(1, 12))
def test_ball_query_neighbors_within_radius_and_sorted(pts, radius, cap):
    res = ball_query(pts, radius, cap)
    for i in range(len(pts)):
        nb = res.indices[i][res.indices[i] >= 0]
        d = np.linalg.norm(pts[nb] - pts[i], axis=1)
        assert np.all(d <= radius + 1e-12) and np.all(np.diff(d) >= -1e-12)
        inside = int((np.linalg.norm(pts - pts[i], axis=1) <= radius).sum())
        assert len(nb) == min(cap, inside)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3,), elements=finite), arrays(np.float64, (3,), elements=finite), st.floats(0, 1))
def test_euler_is_linear_in_acceleration(v, a, dt):
    x1, v1 = euler_step(np.zeros(3), v, a, dt)
    x2, v2 = euler_step(np.zeros(3), v, 2 * a, dt)
    assert np.allclose(v2 - v1, dt * a) and np.allclose(x2 - x1, dt * dt * a)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4, 3), elements=st.floats(-10, 10, width=64)), st.floats(0.1, 10))
def test_relative_l2_scale_invariant(x, s):
    y = x + 0.5
    if np.linalg.norm(y) > 1e-6:
        assert np.isclose(relative_l2(s * x, s * y), relative_l2(x, y))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (20, 2), elements=st.floats(-100, 100, width=64)), st.integers(1, 19))
def test_streaming_stats_split_invariant(rows, cut):
    a, b = ChannelStats(), ChannelStats()
    a.update(rows)
    b.update(rows[:cut])
    b.update(rows[cut:])
    assert np.allclose(a.finalize()[0], b.finalize()[0], atol=1e-4)
    assert np.allclose(a.finalize()[1], b.finalize()[1], rtol=1e-4, atol=1e-4)
