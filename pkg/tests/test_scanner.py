import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simtreels.cloud import LabelledCloud, build_index, concatenate
from simtreels.errors import ConfigError
from simtreels.scanner import (
    ScanParams, brute_force_scan, control_sample, first_return, scan_stand, simulate_scan, write_scan_stats,
)
from simtreels.sensor import SensorShape, build_single_plane
from simtreels.trajectory import Trajectory, posed_samples, traj_handheld_loop

from conftest import plate, random_cloud

IDENTITY = [[1.0, 0.0, 0.0, 0.0]]


def _beam(direction, max_range=10.0, step=0.02):
    return SensorShape(np.array([direction], float), [0], step, max_range, "custom")


def _at_origin():
    return Trajectory(np.zeros((1, 3)), IDENTITY)


def test_first_return_examples():
    assert first_return([(7.5, 1, 0.001), (3.2, 2, 0.015)]) == 2
    assert first_return([]) is None
    assert first_return([(3.0, 5, 0.011), (3.0, 9, 0.004)]) == 9
    assert first_return([(3.0, 9, 0.004), (3.0, 4, 0.004)]) == 4


def test_single_plate_hit():
    stand = plate(5.0)
    res = scan_stand(stand, _beam([0, 1, 0]), _at_origin(), ScanParams(search_radius=0.02))
    assert res.total_returns == 1
    p = res.cloud.xyz[0]
    assert (stand.xyz == p).all(axis=1).any()
    assert res.cloud.level[0] == 3
    assert res.cloud.scanline_id[0] == 0 and res.cloud.pose_index[0] == 0


def test_rear_plate_occluded():
    stand = concatenate([plate(5.0, tree_id=1), plate(8.0, tree_id=2, seed=1)])
    res = scan_stand(stand, _beam([0, 1, 0]), _at_origin(), ScanParams(search_radius=0.02))
    assert res.total_returns == 1
    assert res.cloud.xyz[0, 1] == 5.0 and res.cloud.tree_id[0] == 1
    # remove the front plate and the rear one shows up
    rear = scan_stand(plate(8.0, tree_id=2, seed=1), _beam([0, 1, 0]), _at_origin(), ScanParams(search_radius=0.02))
    assert rear.cloud.tree_id.tolist() == [2]


def test_empty_stand():
    shape = build_single_plane(90, 30, 2, 0.02)
    traj = traj_handheld_loop(r_wide=1.0, r_close=0.5, step=0.5)
    a = scan_stand(LabelledCloud.empty(), shape, traj, ScanParams())
    b = brute_force_scan(LabelledCloud.empty(), shape, traj, ScanParams())
    assert a.total_returns == b.total_returns == 0
    assert a.equals(b)


def test_one_point_stand():
    stand = LabelledCloud(np.array([[3.0, 0.0, 0.0]]), [4], [2])
    shape = build_single_plane(90, 45, 5, 0.02)
    p = ScanParams(search_radius=0.02)
    a = scan_stand(stand, shape, _at_origin(), p)
    b = brute_force_scan(stand, shape, _at_origin(), p)
    assert a.equals(b)
    assert a.total_returns == 1 and a.cloud.scanline_id[0] == 1


def test_oracle_on_random_stand():
    stand = random_cloud(10_000, 21, extent=1.5)
    shape = build_single_plane(180, 12, 4.0, 0.04)
    traj = traj_handheld_loop(r_wide=3.0, r_close=2.0, height=0.2, step=3.0)
    assert len(traj) <= 20
    params = ScanParams(search_radius=0.05, noise_sigma=0.01, seed=3)
    a = simulate_scan(build_index(stand, 0.05), shape, traj, params)
    b = brute_force_scan(stand, shape, traj, params)
    assert a.total_returns > 0
    assert a.equals(b)


def _dense_block(seed, n=3000):
    g = np.random.default_rng(seed)
    return LabelledCloud(g.uniform(-0.6, 0.6, size=(n, 3)) * [1, 1, 0.5], g.integers(0, 5, n), g.integers(0, 4, n))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_zero_noise_subset_and_first_return(seed):
    stand = _dense_block(seed)
    shape = build_single_plane(120, 10, 3.0, 0.02)
    traj = traj_handheld_loop(r_wide=2.0, r_close=1.2, height=0.1, step=1.5, osc_amp_deg=20)
    r = 0.03
    res = scan_stand(stand, shape, traj, ScanParams(search_radius=r))
    c = res.cloud
    assert np.array_equal(c.xyz, stand.xyz[res.source_index])
    # one return per (pose, line)
    keys = c.pose_index.astype(np.int64) * shape.n_lines + c.scanline_id
    assert len(np.unique(keys)) == len(keys)
    # replay: nothing within r of any earlier sample on the same posed line
    rots = traj.rotations()
    for k in range(0, len(c), max(1, len(c) // 60)):
        p, li = int(c.pose_index[k]), int(c.scanline_id[k])
        samples = posed_samples(shape, traj.positions[p], rots[p])[li]
        diff = samples[:, None, :] - stand.xyz[None, :, :]
        d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
        hit_k = np.flatnonzero((d2 <= r * r).any(axis=1))[0]
        assert d2[hit_k, res.source_index[k]] == d2[hit_k].min()


def test_noise_changes_only_coordinates():
    stand = _dense_block(2)
    shape = build_single_plane(120, 10, 3.0, 0.02)
    traj = traj_handheld_loop(r_wide=2.0, r_close=1.2, height=0.1, step=1.0)
    clean = scan_stand(stand, shape, traj, ScanParams(search_radius=0.03))
    noisy = scan_stand(stand, shape, traj, ScanParams(search_radius=0.03, noise_sigma=0.02, seed=5))
    assert np.array_equal(clean.source_index, noisy.source_index)
    assert not np.array_equal(clean.cloud.xyz, noisy.cloud.xyz)
    again = scan_stand(stand, shape, traj, ScanParams(search_radius=0.03, noise_sigma=0.02, seed=5))
    assert noisy.equals(again)
    other = scan_stand(stand, shape, traj, ScanParams(search_radius=0.03, noise_sigma=0.02, seed=6))
    assert not np.array_equal(other.cloud.xyz, noisy.cloud.xyz)


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_worker_count_invariance(workers):
    stand = _dense_block(8, 20_000)
    shape = build_single_plane(180, 3, 3.0, 0.02)
    traj = traj_handheld_loop(r_wide=2.0, r_close=1.2, height=0.1, step=0.3)
    p = ScanParams(search_radius=0.02, noise_sigma=0.02, seed=1)
    idx = build_index(stand, 0.02)
    a = simulate_scan(idx, shape, traj, p, workers=1)
    b = simulate_scan(idx, shape, traj, p, workers=workers)
    assert a.equals(b)
    assert a.cloud.content_hash() == b.cloud.content_hash()


def test_dedupe():
    stand = plate(5.0)
    traj = Trajectory(np.zeros((3, 3)), IDENTITY * 3)
    shape = _beam([0, 1, 0])
    assert scan_stand(stand, shape, traj, ScanParams()).total_returns == 3
    res = scan_stand(stand, shape, traj, ScanParams(dedupe=True))
    assert res.total_returns == 1
    assert res.returns_per_pose.tolist() == [1, 0, 0]


def test_stats(tmp_path):
    stand = plate(2.0, spacing=0.02)
    shape = build_single_plane(60, 10, 4, 0.02)
    # fan turned to look along +Y; the second pose hovers far above the plate
    looking_y = SensorShape(shape.directions[:, [1, 0, 2]], shape.scanline_ids, 0.02, 4, "custom")
    traj = Trajectory([[0, 0, 0], [0, 0, 10]], IDENTITY * 2)
    res = scan_stand(stand, looking_y, traj, ScanParams())
    assert res.returns_per_pose.tolist()[1] == 0
    assert res.returns_per_pose.sum() == res.total_returns
    path = tmp_path / "s.json"
    write_scan_stats(res, path)
    assert '"total_returns"' in path.read_text()


def test_param_validation():
    with pytest.raises(ConfigError):
        ScanParams(search_radius=0)
    with pytest.raises(ConfigError):
        ScanParams(noise_sigma=-1)
    with pytest.raises(ConfigError):
        scan_stand(plate(1.0), build_single_plane(90, 10, 2, 0.05), _at_origin(), ScanParams(search_radius=0.02))


def test_spacing_warning():
    stand = plate(5.0).with_metadata(sample_spacing=0.05)
    with pytest.warns(UserWarning, match="beams may miss"):
        simulate_scan(build_index(stand, 0.02), _beam([0, 1, 0]), _at_origin(), ScanParams())


def test_control_sample():
    stand = random_cloud(1000, 3)
    full = control_sample(stand, 1000, seed=1)
    assert {tuple(p) for p in full.xyz} == {tuple(p) for p in stand.xyz}
    one = control_sample(stand, 1, seed=1)
    assert len(one) == 1 and (stand.xyz == one.xyz[0]).all(axis=1).any()
    a = control_sample(stand, 300, seed=9)
    assert len(a) == 300 and a.equals(control_sample(stand, 300, seed=9))
    assert not a.equals(control_sample(stand, 300, seed=10))
    assert not a.is_scan
    with pytest.raises(ConfigError):
        control_sample(stand, 1001, seed=1)
    with pytest.raises(ConfigError):
        control_sample(stand, 0, seed=1)


def test_control_labels_preserved():
    stand = random_cloud(500, 4)
    c = control_sample(stand, 100, seed=2)
    lookup = {tuple(p): (t, lv) for p, t, lv in zip(map(tuple, stand.xyz), stand.tree_id, stand.level)}
    assert all(lookup[tuple(p)] == (t, lv) for p, t, lv in zip(map(tuple, c.xyz), c.tree_id, c.level))
