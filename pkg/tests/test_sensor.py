import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simtreels.errors import ConfigError
from simtreels.sensor import (
    build_multi_plane, build_single_plane, build_spherical, check_range_step, plane_elevations,
)


def _angles_deg(shape):
    d = shape.directions
    return np.degrees(np.arctan2(d[:, 2], d[:, 0]))


def test_plane_270_shape():
    s = build_single_plane(270, 0.675, 15, 0.02)
    assert s.n_lines == 401
    assert s.n_samples == 750
    assert s.n_points == 300_750
    assert s.ranges[0] == pytest.approx(0.02) and s.ranges[-1] == pytest.approx(15.0)


def test_coarse_fan():
    s = build_single_plane(180, 90, 1, 1)
    assert s.n_lines == 3 and s.n_samples == 1
    assert np.allclose(s.directions, [[0, 0, -1], [1, 0, 0], [0, 0, 1]], atol=1e-15)
    assert s.scanline_ids.tolist() == [0, 1, 2]


def test_fan_geometry():
    s = build_single_plane(270, 0.675, 15, 0.02)
    assert np.allclose(np.linalg.norm(s.directions, axis=1), 1, atol=1e-12)
    # unwrap past +-180 before differencing
    ang = np.unwrap(np.radians(_angles_deg(s)))
    assert np.allclose(np.degrees(np.diff(ang)), 0.675, atol=1e-9)
    assert (s.directions[:, 1] == 0).all()
    # even beam count on each side: mirror symmetric about the central beam
    mid = s.n_lines // 2
    assert np.allclose(s.directions[::-1, 2], -s.directions[:, 2], atol=1e-12)
    assert np.allclose(s.directions[mid], [1, 0, 0], atol=1e-12)


def test_puck_9_beam():
    s = build_multi_plane(270, 0.675, 15, 0.02, 9, 30)
    assert s.meta["plane_spacing_deg"] == pytest.approx(3.75)
    assert np.diff(plane_elevations(9, 30)) == pytest.approx([3.75] * 8)
    assert s.n_lines == 3609
    assert len(np.unique(s.scanline_ids)) == 3609
    assert np.allclose(np.linalg.norm(s.directions, axis=1), 1, atol=1e-12)
    elev = np.degrees(np.arcsin(s.directions[:, 1]))
    assert np.allclose(np.unique(np.round(elev, 9)), np.arange(-15, 15.01, 3.75))


def test_two_planes():
    assert plane_elevations(2, 30).tolist() == [-15.0, 15.0]
    with pytest.raises(ConfigError):
        build_multi_plane(270, 0.675, 15, 0.02, 1, 30)


def test_spherical():
    s = build_spherical(90, 90, 1, 1)
    assert s.n_lines == 12
    assert len(np.unique(s.scanline_ids)) == 12
    assert np.allclose(np.linalg.norm(s.directions, axis=1), 1, atol=1e-12)
    s2 = build_spherical(10, 5, 1, 0.5)
    assert s2.n_lines == (360 // 10) * (180 // 5 + 1)
    with pytest.raises(ConfigError):
        build_spherical(7, 5, 1, 1)


@pytest.mark.parametrize("args", [(270, 0, 15, 0.02), (270, 300, 15, 0.02), (400, 1, 15, 0.02),
                                  (270, 1, 15, 0), (270, 1, 1, 2)])
def test_invalid_single_plane(args):
    with pytest.raises(ConfigError):
        build_single_plane(*args)


def test_range_step_check():
    s = build_single_plane(90, 1, 2, 0.03)
    with pytest.warns(UserWarning):
        check_range_step(s, 0.02)
    with pytest.raises(ConfigError):
        check_range_step(build_single_plane(90, 1, 2, 0.05), 0.02)


def test_export_cloud():
    s = build_multi_plane(90, 10, 1, 0.1, 3, 20)
    c = s.as_cloud()
    assert len(c) == s.n_points
    assert c.is_scan
    assert np.array_equal(np.unique(c.scanline_id), np.sort(s.scanline_ids))


@settings(max_examples=60, deadline=None)
@given(fov=st.floats(1, 360), res=st.floats(0.1, 45), rng=st.floats(0.1, 30), step=st.floats(0.005, 1),
       planes=st.integers(2, 16), vfov=st.floats(1, 90))
def test_shape_invariants(fov, res, rng, step, planes, vfov):
    if res > fov or step > rng:
        return
    s = build_multi_plane(fov, res, rng, step, planes, vfov)
    assert s.n_lines == planes * (int(np.floor(fov / res + 1e-9)) + 1)
    assert len(np.unique(s.scanline_ids)) == s.n_lines
    assert np.allclose(np.linalg.norm(s.directions, axis=1), 1, atol=1e-9)
    r = s.ranges
    assert (np.diff(r) > 0).all() and r[-1] <= rng + 1e-9
    line = s.scan_lines[0]
    assert np.array_equal(line.samples, (np.arange(len(r)) + 1) * step)
