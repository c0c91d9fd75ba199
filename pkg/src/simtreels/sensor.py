"""Sensor shapes: beams discretised into range samples, one scan line per beam.

Sensor frame: +X forward, +Z up. The single-plane fan lies in the XZ plane;
multi-plane copies are tilted out of that plane towards +Y (cones about the
Y axis, like the rings of a spinning multi-beam unit).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, List

import numpy as np

from simtreels.cloud.model import LabelledCloud
from simtreels.errors import ConfigError

_EPS = 1e-9


@dataclass(frozen=True)
class ScanLine:
    scanline_id: int
    direction: np.ndarray
    samples: np.ndarray


@dataclass(frozen=True, eq=False)
class SensorShape:
    """Beam directions (``(L, 3)`` unit vectors, sensor frame) sharing one range grid.

    Sample ``k`` of every beam sits at range ``(k + 1) * range_step``.
    """

    directions: np.ndarray
    scanline_ids: np.ndarray
    range_step: float
    max_range: float
    kind: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.ascontiguousarray(self.directions, dtype=np.float64).reshape(-1, 3)
        ids = np.asarray(self.scanline_ids, dtype=np.int64).reshape(-1)
        if len(ids) != len(d):
            raise ConfigError("one scanline id per beam required")
        if len(np.unique(ids)) != len(ids):
            raise ConfigError("scanline ids must be unique")
        d.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "scanline_ids", ids)

    @property
    def n_samples(self) -> int:
        return int(math.floor(self.max_range / self.range_step + _EPS))

    @property
    def ranges(self) -> np.ndarray:
        return (np.arange(self.n_samples, dtype=np.float64) + 1.0) * self.range_step

    @property
    def n_lines(self) -> int:
        return len(self.directions)

    @property
    def n_points(self) -> int:
        return self.n_lines * self.n_samples

    @property
    def scan_lines(self) -> List[ScanLine]:
        return list(self.iter_lines())

    def iter_lines(self) -> Iterator[ScanLine]:
        ranges = self.ranges
        for sid, d in zip(self.scanline_ids, self.directions):
            yield ScanLine(int(sid), d, ranges)

    def sample_points(self) -> np.ndarray:
        """All samples in the sensor frame, shape ``(L, S, 3)``."""
        r = self.ranges
        d = self.directions
        return r[None, :, None] * d[:, None, :]

    def as_cloud(self) -> LabelledCloud:
        """The shape as a scan-style cloud (pose 0) for inspection and export."""
        pts = self.sample_points().reshape(-1, 3)
        n = len(pts)
        sid = np.repeat(self.scanline_ids, self.n_samples)
        meta = {"stage": "sensor", "kind": self.kind, **self.meta}
        return LabelledCloud(pts, np.zeros(n, np.uint32), np.zeros(n, np.uint8),
                             scanline_id=sid, pose_index=np.zeros(n, np.int64), metadata=meta)


def _check_range(max_range_m: float, range_step_m: float) -> None:
    if not (0 < range_step_m <= max_range_m) or not math.isfinite(max_range_m):
        raise ConfigError(f"need 0 < range_step <= max_range, got step={range_step_m}, range={max_range_m}")


def _fan_angles(fov_deg: float, angular_res_deg: float) -> np.ndarray:
    if not (0 < angular_res_deg <= fov_deg <= 360):
        raise ConfigError(f"need 0 < angular_res <= fov <= 360, got res={angular_res_deg}, fov={fov_deg}")
    n = int(math.floor(fov_deg / angular_res_deg + _EPS)) + 1
    return -fov_deg / 2.0 + angular_res_deg * np.arange(n)


def build_single_plane(fov_deg: float, angular_res_deg: float, max_range_m: float,
                       range_step_m: float) -> SensorShape:
    """Planar fan in the sensor XZ plane spanning ``[-fov/2, +fov/2]``; id = beam index."""
    _check_range(max_range_m, range_step_m)
    phi = np.radians(_fan_angles(fov_deg, angular_res_deg))
    dirs = np.column_stack([np.cos(phi), np.zeros_like(phi), np.sin(phi)])
    meta = dict(fov_deg=fov_deg, angular_res_deg=angular_res_deg, max_range_m=max_range_m,
                range_step_m=range_step_m)
    return SensorShape(dirs, np.arange(len(phi)), float(range_step_m), float(max_range_m), "single_plane", meta)


def plane_elevations(n_planes: int, vertical_fov_deg: float) -> np.ndarray:
    if n_planes < 2:
        raise ConfigError("multi-plane sensors need n_planes >= 2")
    if not (0 < vertical_fov_deg < 180):
        raise ConfigError("vertical_fov must be in (0, 180)")
    step = vertical_fov_deg / (n_planes - 1)
    return -vertical_fov_deg / 2.0 + step * np.arange(n_planes)


def build_multi_plane(fov_deg: float, angular_res_deg: float, max_range_m: float, range_step_m: float,
                      n_planes: int, vertical_fov_deg: float) -> SensorShape:
    _check_range(max_range_m, range_step_m)
    phi = np.radians(_fan_angles(fov_deg, angular_res_deg))
    elev = np.radians(plane_elevations(n_planes, vertical_fov_deg))
    n_beams = len(phi)
    ce = np.cos(elev)[:, None]
    dirs = np.stack([ce * np.cos(phi)[None, :],
                     np.broadcast_to(np.sin(elev)[:, None], (n_planes, n_beams)),
                     ce * np.sin(phi)[None, :]], axis=-1).reshape(-1, 3)
    ids = (np.arange(n_planes)[:, None] * n_beams + np.arange(n_beams)[None, :]).reshape(-1)
    meta = dict(fov_deg=fov_deg, angular_res_deg=angular_res_deg, max_range_m=max_range_m,
                range_step_m=range_step_m, n_planes=n_planes, vertical_fov_deg=vertical_fov_deg,
                plane_spacing_deg=vertical_fov_deg / (n_planes - 1))
    return SensorShape(dirs, ids, float(range_step_m), float(max_range_m), "multi_plane", meta)


def build_spherical(res_az_deg: float, res_el_deg: float, max_range_m: float,
                    range_step_m: float) -> SensorShape:
    """Full-sphere grid; polar beams are duplicated once per azimuth (kept on purpose)."""
    _check_range(max_range_m, range_step_m)
    if not (0 < res_az_deg <= 360) or not (0 < res_el_deg <= 180):
        raise ConfigError("spherical resolutions must be in (0, 360] and (0, 180]")
    n_az = int(math.floor(360.0 / res_az_deg + _EPS))
    n_el = int(math.floor(180.0 / res_el_deg + _EPS)) + 1
    if abs(n_az * res_az_deg - 360.0) > 1e-6 or abs((n_el - 1) * res_el_deg - 180.0) > 1e-6:
        raise ConfigError("spherical resolutions must divide 360 (azimuth) and 180 (elevation)")
    az = np.radians(res_az_deg * np.arange(n_az))
    el = np.radians(-90.0 + res_el_deg * np.arange(n_el))
    ce = np.cos(el)[:, None]
    dirs = np.stack([ce * np.cos(az)[None, :], ce * np.sin(az)[None, :],
                     np.broadcast_to(np.sin(el)[:, None], (n_el, n_az))], axis=-1).reshape(-1, 3)
    ids = (np.arange(n_el)[:, None] * n_az + np.arange(n_az)[None, :]).reshape(-1)
    meta = dict(res_az_deg=res_az_deg, res_el_deg=res_el_deg, max_range_m=max_range_m, range_step_m=range_step_m)
    return SensorShape(dirs, ids, float(range_step_m), float(max_range_m), "spherical", meta)


def check_range_step(shape: SensorShape, search_radius: float) -> None:
    """Reject range steps that could skip a surface; warn when sparser than the radius."""
    if shape.range_step > 2 * search_radius:
        raise ConfigError(f"range_step {shape.range_step} exceeds 2 x search radius {search_radius}")
    if shape.range_step > search_radius:
        warnings.warn(f"range_step {shape.range_step} > search radius {search_radius}; thin surfaces may be missed",
                      stacklevel=2)
