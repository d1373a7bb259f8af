import numpy as np
import pytest

import oracles
from opcrash.geo import (
    ContextProjector,
    PointCloud,
    augmented_width,
    ball_query,
    farthest_point_sample,
    multiscale_features,
    unit_box,
)


def test_collinear_hand_geometry():
    res = ball_query(np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]), 1.5, 8)
    assert res.neighbors(1).tolist() == [1, 0, 2]
    assert res.neighbors(0).tolist() == [0, 1]


def test_infinite_radius_all_neighbors(rng):
    pts = rng.random((20, 3))
    res = ball_query(pts, np.inf, 32)
    assert np.all(res.counts == 20)
    assert all(sorted(res.neighbors(i)) == list(range(20)) for i in range(20))


def test_isolated_point_has_itself(rng):
    res = ball_query(np.array([[0.0, 0, 0], [5.0, 0, 0]]), 0.1, 4)
    assert res.neighbors(0).tolist() == [0] and res.indices[0, 1] == -1


def test_all_pairs_oracle_200(rng):
    pts = rng.random((200, 3))
    for radius, cap in ((0.05, 8), (0.25, 32), (0.4, 200)):
        res = ball_query(pts, radius, cap)
        ref = oracles.ball_query(pts, radius, cap)
        for i in range(200):
            assert res.neighbors(i).tolist() == ref[i]


def test_tie_break_by_index():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
    assert ball_query(pts, 1.0, 8).neighbors(0).tolist() == [0, 1, 2, 3]


def test_neighbors_within_radius(rng):
    pts = rng.random((150, 3))
    res = ball_query(pts, 0.2, 16)
    for i in range(150):
        nb = res.neighbors(i)
        assert len(nb) <= 16
        assert np.all(np.linalg.norm(pts[nb] - pts[i], axis=1) <= 0.2)


def test_bad_arguments():
    with pytest.raises(ValueError):
        ball_query(np.zeros((2, 3)), 0.0, 3)
    with pytest.raises(ValueError):
        ball_query(np.zeros((2, 3)), 1.0, 0)
    with pytest.raises(ValueError):
        PointCloud(np.array([[np.nan, 0, 0]]))


def test_single_point_features():
    f = multiscale_features(PointCloud(np.zeros((1, 3)), np.ones((1, 2))), ((0.1, 8),))
    assert f.shape == (1, augmented_width(2, 1))
    assert np.all(f[0, 5:8] == 0) and f[0, 8] == 0 and f[0, 9] == 1 / 8


def test_symmetric_interior_point_has_zero_offset():
    g = np.stack(np.meshgrid(*[np.arange(5.0)] * 3, indexing="ij"), -1).reshape(-1, 3) / 4
    f = multiscale_features(PointCloud(g), ((0.3, 64),))
    centre = int(np.argmin(np.linalg.norm(g - 0.5, axis=1)))
    assert np.abs(f[centre, 3:6]).max() < 1e-6


def naive_features(cloud, scales):
    pos, feats = cloud.positions, cloud.features
    rows = []
    for i in range(len(pos)):
        row = list(pos[i]) + list(feats[i])
        for radius, cap in scales:
            nb = oracles.ball_query(pos, radius, cap)[i]
            cent = pos[nb].mean(axis=0)
            dist = np.mean([np.linalg.norm(pos[j] - pos[i]) for j in nb])
            row += list(cent - pos[i]) + [dist, len(nb) / cap] + list(feats[nb].mean(axis=0))
        rows.append(row)
    return np.array(rows)


def test_multiscale_features_naive_oracle(rng):
    cloud = PointCloud(rng.random((50, 3)), rng.standard_normal((50, 2)))
    scales = ((0.2, 4), (0.5, 16))
    got = multiscale_features(cloud, scales)
    assert got.shape[1] == augmented_width(2, 2) == 3 + 2 + 2 * 7
    assert np.abs(got - naive_features(cloud, scales)).max() < 1e-12


def test_multiscale_permutation_equivariance(rng):
    cloud = PointCloud(rng.random((60, 3)), rng.standard_normal((60, 3)))
    perm = rng.permutation(60)
    a = multiscale_features(cloud)[perm]
    b = multiscale_features(cloud.permuted(perm))
    assert np.abs(a - b).max() < 1e-12


def test_unit_box():
    u = unit_box(np.array([[1.0, 2, 3], [3.0, 3, 3]]))
    assert u.min() == 0 and u.max() == 1


def test_fps_two_points():
    pts = np.array([[0.0, 0, 0], [1.0, 1, 1]])
    assert farthest_point_sample(pts, 1).tolist() == [1]


def test_fps_order_invariant(rng):
    pts = rng.random((80, 3))
    perm = rng.permutation(80)
    a = set(farthest_point_sample(pts, 10).tolist())
    b = set(perm[farthest_point_sample(pts[perm], 10)].tolist())
    assert a == b


def zero_mlp(net, bias):
    for layer in net.layers:
        layer.weight.data = np.zeros_like(layer.weight.data)
        layer.bias.data = np.zeros_like(layer.bias.data)
    net.layers[-1].bias.data = np.asarray(bias, dtype=np.float32)


def test_context_zero_globals_give_biases(rng):
    proj = ContextProjector(2, 3, 2, 4, rng, anchors=5)
    zero_mlp(proj.globals_mlp, [1, 2, 3, 4])
    zero_mlp(proj.bc_mlp, [5, 6, 7, 8])
    bank = proj(PointCloud(rng.random((20, 3)), rng.random((20, 2))), np.zeros(3), np.zeros(2))
    assert len(bank) == 7
    assert bank.tokens.data[-2].tolist() == [1, 2, 3, 4]
    assert bank.tokens.data[-1].tolist() == [5, 6, 7, 8]
    assert bank.provenance == ["geometry"] * 5 + ["global", "boundary"]


def test_context_permutation_invariant(rng):
    proj = ContextProjector(2, 3, 2, 8, rng, anchors=6)
    cloud = PointCloud(rng.random((40, 3)), rng.random((40, 2)))
    perm = rng.permutation(40)
    g, b = rng.random(3), rng.random(2)
    a = proj(cloud, g, b).tokens.data
    c = proj(cloud.permuted(perm), g, b).tokens.data
    assert np.abs(a - c).max() < 1e-6


def test_context_single_anchor_two_points(rng):
    proj = ContextProjector(0, 1, 1, 4, rng, anchors=1)
    pts = np.array([[0.0, 0, 0], [2.0, 1, 0]])
    cloud = PointCloud(pts)
    assert proj.anchor_indices(cloud.normalized()).tolist() == [1]
    assert len(proj(cloud, np.zeros(1), np.zeros(1))) == 3


def test_context_call_counter(rng):
    proj = ContextProjector(1, 1, 1, 4, rng, anchors=2)
    cloud = PointCloud(rng.random((5, 3)), rng.random((5, 1)))
    proj(cloud, np.zeros(1), np.zeros(1))
    proj(cloud, np.zeros(1), np.zeros(1))
    assert proj.calls == 2
