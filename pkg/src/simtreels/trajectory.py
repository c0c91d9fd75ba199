"""Sensor trajectories: pose sequences for handheld, ground-vehicle and aerial scanning.

Mounting conventions (sensor frame +X forward, +Z up, fan in XZ):

* handheld: +X looks horizontally at the target, rolled 90 degrees so the fan
  is horizontal; a sinusoidal pitch nods the fan up and down.
* ground rows: +X points up and +Y along travel, so the fan is a vertical
  plane across the direction of travel.
* aerial: +X points to nadir and +Y along travel (fan sweeps across-track).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from simtreels.errors import ConfigError, InputFileError
from simtreels.rotations import matrix_to_quat, quat_to_matrix, rot_x, rot_y, rot_z
from simtreels.sensor import SensorShape

_EPS = 1e-9


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(3)
        q = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ConfigError(f"pose quaternion must be unit length, |q| = {np.linalg.norm(q)}")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)


@dataclass(frozen=True, eq=False)
class Trajectory:
    positions: np.ndarray     # (P, 3)
    quaternions: np.ndarray   # (P, 4), w first
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        q = np.ascontiguousarray(self.quaternions, dtype=np.float64).reshape(-1, 4)
        if len(p) == 0:
            raise ConfigError("trajectory must contain at least one pose")
        if len(p) != len(q):
            raise ConfigError("positions and quaternions differ in length")
        if not (np.isfinite(p).all() and np.isfinite(q).all()):
            raise ConfigError("trajectory contains non-finite values")
        q = q / np.linalg.norm(q, axis=1, keepdims=True)
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "quaternions", q)

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Pose:
        return Pose(self.positions[i], self.quaternions[i])

    def __iter__(self) -> Iterator[Pose]:
        for i in range(len(self)):
            yield self[i]

    @property
    def poses(self) -> List[Pose]:
        return list(self)

    def rotations(self) -> np.ndarray:
        return np.ascontiguousarray(quat_to_matrix(self.quaternions))

    def segment(self, name: str) -> slice:
        lo, hi = self.meta["segments"][name]
        return slice(lo, hi)


def apply_pose(shape: SensorShape, pose: Pose) -> Tuple[np.ndarray, np.ndarray]:
    """Place the sensor samples in the world: ``position + R @ (t * d)``.

    Returns ``(points, scanline_ids)`` with ``points`` of shape ``(L, S, 3)``.
    The arithmetic order here is mirrored exactly by the scan kernel.
    """
    return posed_samples(shape, pose.position, pose.rotation), shape.scanline_ids


def posed_samples(shape: SensorShape, position: np.ndarray, rot: np.ndarray) -> np.ndarray:
    t = shape.ranges[None, :]
    d = shape.directions
    lx = t * d[:, 0:1]
    ly = t * d[:, 1:2]
    lz = t * d[:, 2:3]
    out = np.empty((shape.n_lines, shape.n_samples, 3))
    for i in range(3):
        out[..., i] = position[i] + (rot[i, 0] * lx + rot[i, 1] * ly + rot[i, 2] * lz)
    return out


def _n_intervals(length: float, step: float) -> int:
    return max(1, int(math.ceil(length / step - _EPS)))


def _line(a: np.ndarray, b: np.ndarray, step: float, include_end: bool = True) -> np.ndarray:
    n = _n_intervals(float(np.linalg.norm(b - a)), step)
    s = np.arange(n + 1 if include_end else n) / n
    return a[None, :] + s[:, None] * (b - a)[None, :]


def _frame_quat(ex: np.ndarray, ey: np.ndarray) -> np.ndarray:
    ez = np.cross(ex, ey)
    return matrix_to_quat(np.column_stack([ex, ey, ez]))


def traj_handheld_loop(target=(0.0, 0.0, 0.0), r_wide: float = 7.0, r_close: float = 2.5, height: float = 1.5,
                       step: float = 0.1, osc_amp_deg: float = 45.0, osc_period_m: float = 0.5) -> Trajectory:
    """Wide circle, radial transit, then close circle around ``target`` at ``height``.

    Orientation looks at the target's vertical axis; the pitch follows
    ``osc_amp_deg * sin(2 pi s / osc_period_m)`` with ``s`` the distance walked.
    """
    if not (r_wide > r_close > 0):
        raise ConfigError("need r_wide > r_close > 0")
    if not step > 0:
        raise ConfigError("step must be > 0")
    if osc_amp_deg and not osc_period_m > 0:
        raise ConfigError("osc_period_m must be > 0 when oscillating")
    target = np.asarray(target, dtype=np.float64).reshape(3)

    def circle(r):
        n = max(3, _n_intervals(2 * math.pi * r, step))
        th = 2 * math.pi * np.arange(n) / n
        return np.column_stack([target[0] + r * np.cos(th), target[1] + r * np.sin(th), np.full(n, height)])

    wide = circle(r_wide)
    close = circle(r_close)
    transit = _line(wide[0], close[0], step, include_end=False)
    positions = np.vstack([wide, transit, close])
    s = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(positions, axis=0), axis=1))]
    yaw = np.arctan2(target[1] - positions[:, 1], target[0] - positions[:, 0])
    pitch = np.radians(osc_amp_deg) * np.sin(2 * math.pi * s / osc_period_m) if osc_amp_deg else np.zeros(len(s))
    roll = rot_x(math.pi / 2)
    quats = np.array([matrix_to_quat(rot_z(a) @ rot_y(-b) @ roll) for a, b in zip(yaw, pitch)])
    nw, nt = len(wide), len(transit)
    meta = dict(kind="handheld_loop", target=target.tolist(), r_wide=r_wide, r_close=r_close, height=height,
                step=step, osc_amp_deg=osc_amp_deg, osc_period_m=osc_period_m,
                segments={"wide": [0, nw], "transit": [nw, nw + nt], "close": [nw + nt, len(positions)]})
    return Trajectory(positions, quats, meta)


def _serpentine(lines: Sequence[Tuple[np.ndarray, np.ndarray]], step: float, quat_for, kind: str,
                extra_meta: dict) -> Trajectory:
    """Traverse ``lines`` alternately forwards and backwards, joined by straight connectors."""
    positions, quats, segments = [], [], {}
    count = 0
    for k, (a, b) in enumerate(lines):
        if k % 2:
            a, b = b, a
        if k:
            prev = positions[-1][-1]
            conn = _line(prev, a, step)[1:-1]
            if len(conn):
                heading = (a - prev) / np.linalg.norm(a - prev)
                positions.append(conn)
                quats.append(np.repeat(quat_for(heading)[None, :], len(conn), axis=0))
                segments[f"turn{k}"] = [count, count + len(conn)]
                count += len(conn)
        pts = _line(a, b, step)
        heading = (b - a) / np.linalg.norm(b - a)
        positions.append(pts)
        quats.append(np.repeat(quat_for(heading)[None, :], len(pts), axis=0))
        segments[f"pass{k}"] = [count, count + len(pts)]
        count += len(pts)
    meta = dict(kind=kind, step=step, segments=segments, **extra_meta)
    return Trajectory(np.vstack(positions), np.vstack(quats), meta)


def ground_quat(heading: np.ndarray) -> np.ndarray:
    return _frame_quat(np.array([0.0, 0.0, 1.0]), heading)


def aerial_quat(heading: np.ndarray) -> np.ndarray:
    return _frame_quat(np.array([0.0, 0.0, -1.0]), heading)


def row_pass_offsets(n_rows: int, row_spacing: float) -> np.ndarray:
    """Across-row offsets (relative to the first row) of the driving lines."""
    return row_spacing * (np.arange(n_rows + 1) - 0.5)


def traj_ground_rows(layout, height: float = 1.8, step: float = 0.1, margin: Optional[float] = None) -> Trajectory:
    """Serpentine drive along every inter-row lane of an orchard layout.

    Passes extend ``margin`` (default one tree spacing) past the row ends.
    """
    from simtreels.stand import OrchardLayout, StandLayout, orchard_frame

    if isinstance(layout, StandLayout):
        if layout.kind != "orchard":
            raise ConfigError("ground-rows trajectories need an orchard layout")
        layout = layout.orchard
    if not isinstance(layout, OrchardLayout):
        raise ConfigError("ground-rows trajectories need an orchard layout")
    if not step > 0:
        raise ConfigError("step must be > 0")
    margin = layout.tree_spacing if margin is None else margin
    to_world, row_len, _ = orchard_frame(layout)
    xs = row_pass_offsets(layout.rows, layout.row_spacing)
    y0, y1 = -margin, row_len + margin
    lines = []
    for x in xs:
        a = to_world(np.array([x, y0]))
        b = to_world(np.array([x, y1]))
        lines.append((np.r_[a, height], np.r_[b, height]))
    return _serpentine(lines, step, ground_quat, "ground_rows",
                       dict(height=height, margin=margin, pass_offsets=xs.tolist()))


def traj_aerial_grid(extent, altitude: float = 30.0, line_spacing: float = 10.0, step: float = 0.5,
                     canopy_height: Optional[float] = None) -> Trajectory:
    """Boustrophedon over ``extent = (x_min, y_min, x_max, y_max)``; lines run along +Y."""
    x0, y0, x1, y1 = (float(v) for v in extent)
    if not (x1 > x0 and y1 > y0):
        raise ConfigError("extent must have x_max > x_min and y_max > y_min")
    if not (line_spacing > 0 and step > 0 and altitude > 0):
        raise ConfigError("altitude, line_spacing and step must be > 0")
    if canopy_height is not None and altitude <= canopy_height:
        raise ConfigError(f"altitude {altitude} m is not above the canopy ({canopy_height} m)")
    n_lines = int(math.floor((x1 - x0) / line_spacing + _EPS)) + 1
    lines = [(np.array([x0 + k * line_spacing, y0, altitude]), np.array([x0 + k * line_spacing, y1, altitude]))
             for k in range(n_lines)]
    return _serpentine(lines, step, aerial_quat, "aerial_grid",
                       dict(extent=[x0, y0, x1, y1], altitude=altitude, line_spacing=line_spacing))


TRAJECTORY_COLUMNS = ["x", "y", "z", "qw", "qx", "qy", "qz"]


def write_trajectory_csv(traj: Trajectory, path) -> None:
    data = np.hstack([traj.positions, traj.quaternions])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")


def read_trajectory_csv(path) -> Trajectory:
    path = Path(path)
    if not path.is_file():
        raise InputFileError(f"cannot read {path}: no such file")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header.split(",") != TRAJECTORY_COLUMNS:
            raise ConfigError(f"{path}: unexpected trajectory header {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        raise ConfigError(f"{path}: trajectory has no poses")
    return Trajectory(data[:, :3], data[:, 3:], dict(kind="file", source=str(path)))
