import hashlib

import numpy as np
import pytest

from opcrash.crashdata import (
    DEFAULT_RESOLUTION,
    ChannelStats,
    DatasetError,
    DesignConfig,
    LatticeError,
    NormStats,
    SimulationError,
    assign_splits,
    build_lattice,
    doe_configs,
    element_count,
    from_bytes,
    generate_doe,
    load_split,
    make_sample,
    normalize_stats,
    probe_points,
    save_splits,
    simulate,
    split_counts,
    stable_step,
    template_box,
    to_bytes,
)


# -- lattice ------------------------------------------------------------------

def test_unit_scale_fills_template_box():
    lat = build_lattice(DesignConfig())
    box = template_box(DEFAULT_RESOLUTION)
    assert np.allclose(lat.positions.min(axis=0), box[0]) and np.allclose(lat.positions.max(axis=0), box[1])


def test_scales_stretch_each_axis():
    a = build_lattice(DesignConfig()).positions
    b = build_lattice(DesignConfig(1.1, 0.9, 1.05)).positions
    assert np.allclose(b, a * [1.1, 0.9, 1.05])


def test_thickness_doubles_stiffness_and_yield():
    a, b = build_lattice(DesignConfig()), build_lattice(DesignConfig(thickness=2.0))
    assert np.allclose(b.stiffness, 2 * a.stiffness) and np.allclose(b.yield_force, 2 * a.yield_force)


def test_element_count_single_cell():
    lat = build_lattice(DesignConfig(), (2, 2, 2))
    assert lat.n_elements == 12 + 6 * 2 == element_count((2, 2, 2))
    assert len({tuple(sorted(e)) for e in lat.elements.tolist()}) == lat.n_elements


def test_element_count_default_lattice():
    lat = build_lattice(DesignConfig())
    assert lat.n_nodes == 516 and lat.n_elements == element_count(DEFAULT_RESOLUTION)


def test_invalid_configs():
    with pytest.raises(LatticeError):
        DesignConfig(sx=0.0)
    with pytest.raises(LatticeError):
        DesignConfig(v0=1.0)
    with pytest.raises(LatticeError):
        build_lattice(DesignConfig(), (1, 4, 3))


# -- simulator ----------------------------------------------------------------

@pytest.fixture(scope="module")
def crash():
    return simulate(build_lattice(DesignConfig(v0=-7.0, thickness=0.7, offset=120.0)))


def test_zero_velocity_stays_at_rest():
    lat = build_lattice(DesignConfig(v0=0.0))
    res = simulate(lat, frames=5)
    assert np.abs(res.trajectory.positions - lat.positions).max() < 1e-12


def test_free_flight_before_contact():
    lat = build_lattice(DesignConfig(v0=-5.0))
    res = simulate(lat, frames=5, frame_dt=0.04)  # 1 mm of travel, wall gap is 2 mm
    t = np.arange(6)[:, None] * 0.04
    xs = res.trajectory.positions
    assert np.abs(xs[..., 0] - (lat.positions[:, 0] - 5.0 * t)).max() < 1e-9
    assert np.abs(xs[..., 1:] - lat.positions[:, 1:]).max() < 1e-9


def test_energy_conserved_within_one_percent(crash):
    assert crash.energy_error() < 0.01


def test_wall_penetration_within_tolerance(crash):
    lat = build_lattice(DesignConfig(v0=-7.0, thickness=0.7, offset=120.0))
    assert crash.max_penetration < 0.02 * lat.rest_length.min()


def test_plastic_slip_is_monotone(crash):
    assert crash.plastic_slip[-1].max() > 0
    assert np.all(np.diff(crash.plastic_slip, axis=0) >= 0)


def test_unstable_step_rejected():
    lat = build_lattice(DesignConfig())
    with pytest.raises(SimulationError):
        simulate(lat, dt_sim=2 * stable_step(lat), frames=1)


def test_trajectory_shape_and_dt(crash):
    tr = crash.trajectory
    assert tr.positions.shape == (51, 516, 3) and abs(tr.dt - 0.4) < 1e-15


# -- probes -------------------------------------------------------------------

def test_probes_symmetric_about_impact_axis():
    lat = build_lattice(DesignConfig())
    a, b = lat.positions[probe_points(lat)]
    assert np.allclose(a[[0, 2]], b[[0, 2]]) and abs(a[1] + b[1]) < 1e-9


def test_probes_stable_across_regeneration():
    cfg = DesignConfig(1.05, 0.95, 1.0)
    assert probe_points(build_lattice(cfg)) == probe_points(build_lattice(cfg))


def test_probes_on_rear_face():
    lat = build_lattice(DesignConfig(offset=240.0))
    for p in probe_points(lat):
        assert lat.positions[p, 0] > lat.wall[0]
        # rear layer: farthest from the wall among nodes at this (y, z)
        same = np.all(np.isclose(lat.positions[:, 1:], lat.positions[p, 1:]), axis=1)
        assert lat.positions[p, 0] == lat.positions[same, 0].max()


# -- design sweep and splits --------------------------------------------------

def test_split_counts():
    assert split_counts(27) == [21, 3, 3]
    assert split_counts(1) == [1, 0, 0]
    assert sum(split_counts(10)) == 10


def test_doe_sizes_and_determinism():
    assert len(doe_configs((1, 1, 1))) == 1 and len(doe_configs()) == 27
    assert doe_configs(seed=3) == doe_configs(seed=3) and doe_configs(seed=3) != doe_configs(seed=4)
    for c in doe_configs():
        assert all(0.9 <= s <= 1.1 for s in (c.sx, c.sy, c.sz))


def test_assign_splits_is_order_independent():
    cfgs = doe_configs()
    a, b = assign_splits(cfgs), assign_splits(cfgs[::-1])
    assert a == b and [len(a[s]) for s in ("train", "val", "test")] == [21, 3, 3]


def test_doe_bad_levels():
    with pytest.raises(DatasetError):
        doe_configs((4, 1, 1))


def test_regeneration_bit_identical(tmp_path):
    d1 = save_splits(generate_doe((2, 1, 1), frames=4), tmp_path / "a")
    d2 = save_splits(generate_doe((2, 1, 1), frames=4), tmp_path / "b")
    assert d1 == d2
    assert hashlib.sha256((tmp_path / "a" / "train.opds").read_bytes()).hexdigest() == d1["train"]


# -- OPDS ----------------------------------------------------------------------

def test_opds_round_trip(small_doe):
    ds = small_doe["train"]
    back = from_bytes(to_bytes(ds))
    assert back.split == ds.split and back.dt == ds.dt and len(back) == len(ds)
    for s, r in zip(ds.samples, back.samples):
        assert r.config == s.config and r.probes == s.probes
        assert np.array_equal(r.trajectory.positions, s.trajectory.positions.astype(np.float32))
        assert np.array_equal(r.trajectory.v0, s.trajectory.v0.astype(np.float32))
    assert to_bytes(back) == to_bytes(ds)


def test_opds_header_layout(small_doe):
    raw = to_bytes(small_doe["train"])
    assert raw[:4] == b"OPDS"
    version, n, t = np.frombuffer(raw[4:16], dtype="<u4")
    assert (version, n, t) == (1, 516, 6)


def test_opds_rejects_bad_magic_and_truncation(small_doe):
    raw = to_bytes(small_doe["train"])
    with pytest.raises(DatasetError):
        from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DatasetError):
        from_bytes(raw[:-10])


def test_missing_split(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_split(tmp_path, "test")


# -- normalization ---------------------------------------------------------------

def test_normalize_round_trip(small_doe):
    st = normalize_stats(small_doe["train"].samples)
    x = small_doe["val"].samples[0].trajectory.positions
    assert np.abs(st.invert("position", st.apply("position", x)) - x).max() < 1e-3


def test_normalized_train_is_standard(small_doe):
    samples = small_doe["train"].samples
    st = normalize_stats(samples)
    z = np.concatenate([st.apply("position", s.trajectory.positions).reshape(-1, 3) for s in samples])
    assert np.abs(z.mean(axis=0)).max() < 1e-4 and np.abs(z.std(axis=0) - 1).max() < 1e-4


def test_constant_channel_gets_unit_std():
    acc = ChannelStats()
    acc.update(np.full((10, 2), 3.0))
    mean, std = acc.finalize()
    assert np.array_equal(std, [1.0, 1.0]) and np.allclose(mean, 3.0)


def test_streaming_moments_match_two_pass(rng):
    rows = rng.standard_normal((100, 3)) * [1.0, 10.0, 0.1] + [5.0, -2.0, 0.0]
    acc = ChannelStats()
    for chunk in np.array_split(rows, 7):
        acc.update(chunk)
    mean, std = acc.finalize()
    assert np.allclose(mean, rows.mean(axis=0), rtol=1e-6) and np.allclose(std, rows.std(axis=0), rtol=1e-6)


def test_stats_blob_round_trip(small_doe):
    st = normalize_stats(small_doe["train"].samples)
    back = NormStats.from_blobs(st.blobs())
    for g in st.mean:
        assert np.array_equal(back.mean[g], st.mean[g]) and np.array_equal(back.std[g], st.std[g])
    assert back.accel_scale == st.accel_scale


def test_normalize_needs_samples():
    with pytest.raises(ValueError):
        normalize_stats([])


def test_make_sample_node_count():
    s = make_sample(DesignConfig(), nodes=120, frames=2)
    assert s.trajectory.n_points == 120
