import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simtreels.errors import ConfigError, InputFileError
from simtreels.rotations import quat_from_axis_angle
from simtreels.sensor import build_single_plane
from simtreels.stand import ForestLayout, OrchardLayout, StandLayout
from simtreels.trajectory import (
    Pose, Trajectory, apply_pose, read_trajectory_csv, row_pass_offsets, traj_aerial_grid, traj_ground_rows,
    traj_handheld_loop, write_trajectory_csv,
)


def _forward(traj):
    return traj.rotations()[:, :, 0]


def test_wide_circle_eight_poses():
    t = traj_handheld_loop(r_wide=7, r_close=2.5, step=2 * math.pi * 7 / 8)
    wide = t.positions[t.segment("wide")]
    assert len(wide) == 8
    assert np.allclose(np.hypot(wide[:, 0], wide[:, 1]), 7)
    ang = np.degrees(np.arctan2(wide[:, 1], wide[:, 0])) % 360
    assert np.allclose(ang, np.arange(0, 360, 45))
    assert np.allclose(t.positions[:, 2], 1.5)


def test_no_oscillation_faces_target():
    target = np.array([1.0, -2.0, 0.0])
    t = traj_handheld_loop(target=target, osc_amp_deg=0, step=0.3)
    fwd = _forward(t)
    to_axis = target[:2] - t.positions[:, :2]
    cross = fwd[:, 0] * to_axis[:, 1] - fwd[:, 1] * to_axis[:, 0]
    assert np.allclose(cross, 0, atol=1e-9)
    assert ((fwd[:, :2] * to_axis).sum(1) > 0).all()
    assert np.allclose(fwd[:, 2], 0, atol=1e-12)


def test_pitch_envelope():
    t = traj_handheld_loop(osc_amp_deg=45, osc_period_m=1.0, step=0.1)
    pitch = np.degrees(np.arcsin(np.clip(_forward(t)[:, 2], -1, 1)))
    assert pitch.min() == pytest.approx(-45, abs=1.0)
    assert pitch.max() == pytest.approx(45, abs=1.0)
    assert np.abs(pitch).max() <= 45 + 1e-9


def test_loops_close_within_step():
    step = 0.1
    t = traj_handheld_loop(step=step)
    for seg in ("wide", "close"):
        p = t.positions[t.segment(seg)]
        assert np.linalg.norm(p[0] - p[-1]) <= step + 1e-12
        assert (np.linalg.norm(np.diff(p, axis=0), axis=1) <= step + 1e-12).all()


def test_handheld_errors():
    with pytest.raises(ConfigError):
        traj_handheld_loop(r_wide=2, r_close=3)
    with pytest.raises(ConfigError):
        traj_handheld_loop(step=0)


def test_ground_pass_offsets():
    assert row_pass_offsets(2, 10).tolist() == [-5.0, 5.0, 15.0]
    lay = OrchardLayout(rows=2, trees_per_row=3, tree_spacing=6, row_spacing=10)
    t = traj_ground_rows(lay, step=0.5)
    assert t.meta["pass_offsets"] == [-5.0, 5.0, 15.0]
    # rows sit at x = -5 and +5 once centred, so the lanes are at -10, 0 and 10
    xs = [np.unique(np.round(t.positions[t.segment(f"pass{k}")][:, 0], 9)).tolist() for k in range(3)]
    assert xs == [[-10.0], [0.0], [10.0]]
    assert np.allclose(t.positions[:, 2], 1.8)


def test_ground_pass_pose_count():
    lay = OrchardLayout(rows=1, trees_per_row=5, tree_spacing=6)
    t = traj_ground_rows(lay, step=1.0, margin=0.0)
    for k in range(2):
        assert len(t.positions[t.segment(f"pass{k}")]) == 25


def test_ground_orientation_alternates():
    t = traj_ground_rows(OrchardLayout(rows=3, trees_per_row=3), step=0.5)
    r = t.rotations()
    heads = []
    for k in range(4):
        q = t.quaternions[t.segment(f"pass{k}")]
        assert np.allclose(q, q[0])
        heads.append(r[t.segment(f"pass{k}")][0][:, 1])
    for a, b in zip(heads, heads[1:]):
        assert np.allclose(a, -b)
    # fan plane (sensor XZ) is across the direction of travel
    assert np.allclose(r[t.segment("pass0")][0][:, 0], [0, 0, 1])


def test_ground_rotated_rows():
    t = traj_ground_rows(OrchardLayout(rows=2, trees_per_row=3, row_azimuth=90), step=0.5)
    p = t.positions[t.segment("pass0")]
    assert np.allclose(p[:, 1], p[0, 1])


def test_ground_needs_orchard():
    with pytest.raises(ConfigError):
        traj_ground_rows(StandLayout("forest", forest=ForestLayout()))
    with pytest.raises(ConfigError):
        traj_ground_rows(OrchardLayout(), step=0)


def test_aerial_lines():
    t = traj_aerial_grid((0, 0, 30, 30), altitude=40, line_spacing=10, step=1.0)
    passes = [k for k in t.meta["segments"] if k.startswith("pass")]
    assert len(passes) == 4
    assert np.allclose(t.positions[:, 2], 40)
    r = t.rotations()
    assert np.allclose(r[:, :, 0], [0, 0, -1])
    h = [r[t.segment(f"pass{k}")][0][:, 1] for k in range(4)]
    assert np.allclose(h[0], [0, 1, 0]) and np.allclose(h[1], [0, -1, 0]) and np.allclose(h[2], h[0])
    steps = np.linalg.norm(np.diff(t.positions, axis=0), axis=1)
    assert (steps <= 1.0 + 1e-12).all()


def test_aerial_errors():
    with pytest.raises(ConfigError):
        traj_aerial_grid((0, 0, 30, 30), altitude=5, canopy_height=6)
    with pytest.raises(ConfigError):
        traj_aerial_grid((0, 0, 0, 30))


def test_apply_pose_identity():
    s = build_single_plane(90, 45, 1, 0.25)
    pts, ids = apply_pose(s, Pose(np.zeros(3), [1, 0, 0, 0]))
    assert np.array_equal(pts, s.sample_points())
    assert np.array_equal(ids, s.scanline_ids)


def test_apply_pose_yaw_90():
    s = build_single_plane(90, 45, 1, 0.25)     # central beam is +X
    pose = Pose(np.array([1.0, 2.0, 3.0]), quat_from_axis_angle([0, 0, 1], math.pi / 2))
    pts, _ = apply_pose(s, pose)
    centre = pts[1] - pose.position
    assert np.allclose(centre / np.linalg.norm(centre, axis=1, keepdims=True), [0, 1, 0], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(q=st.tuples(*[st.floats(-1, 1)] * 4).filter(lambda q: np.linalg.norm(q) > 0.1),
       pos=st.tuples(*[st.floats(-100, 100)] * 3))
def test_apply_pose_preserves_range(q, pos):
    q = np.array(q) / np.linalg.norm(q)
    s = build_single_plane(270, 30, 3, 0.5)
    pose = Pose(np.array(pos), q)
    pts, _ = apply_pose(s, pose)
    dist = np.linalg.norm(pts - pose.position, axis=2)
    assert np.allclose(dist, s.ranges[None, :], atol=1e-9, rtol=0)


def test_pose_requires_unit_quaternion():
    with pytest.raises(ConfigError):
        Pose(np.zeros(3), [1, 1, 0, 0])


def test_csv_round_trip(tmp_path):
    t = traj_handheld_loop(step=0.5)
    path = tmp_path / "t.csv"
    write_trajectory_csv(t, path)
    assert path.read_text().splitlines()[0] == "x,y,z,qw,qx,qy,qz"
    back = read_trajectory_csv(path)
    assert np.allclose(back.positions, t.positions, atol=1e-9)
    assert np.allclose(back.quaternions, t.quaternions, atol=1e-9)
    with pytest.raises(InputFileError):
        read_trajectory_csv(tmp_path / "none.csv")


def test_generators_deterministic():
    a, b = traj_handheld_loop(step=0.2), traj_handheld_loop(step=0.2)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.quaternions, b.quaternions)


def test_empty_trajectory_rejected():
    with pytest.raises(ConfigError):
        Trajectory(np.zeros((0, 3)), np.zeros((0, 4)))
