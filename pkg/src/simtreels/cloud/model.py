from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional, Sequence

import numpy as np

from simtreels.errors import ConfigError

LEVELS = (0, 1, 2, 3)


@dataclass(frozen=True)
class LabelledPoint:
    x: float
    y: float
    z: float
    tree_id: int
    level: int
    scanline_id: Optional[int] = None
    pose_index: Optional[int] = None

    def __post_init__(self):
        if not np.all(np.isfinite([self.x, self.y, self.z])):
            raise ConfigError("point coordinates must be finite")
        if self.level not in LEVELS:
            raise ConfigError(f"level must be in 0..3, got {self.level}")
        if self.tree_id < 0:
            raise ConfigError("tree_id must be non-negative")
        if (self.scanline_id is None) != (self.pose_index is None):
            raise ConfigError("scanline_id and pose_index must be both set or both absent")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LabelledCloud:
    """Column-oriented labelled point cloud.

    ``xyz`` is an ``(N, 3)`` float64 array; labels are parallel 1-D arrays.
    ``scanline_id`` and ``pose_index`` are either both ``None`` (a source
    cloud) or both arrays (a simulated scan). Arrays are made read-only on
    construction.
    """

    xyz: np.ndarray
    tree_id: np.ndarray
    level: np.ndarray
    scanline_id: Optional[np.ndarray] = None
    pose_index: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        n = len(xyz)
        tree_id = np.asarray(self.tree_id).reshape(-1)
        level = np.asarray(self.level).reshape(-1)
        if len(tree_id) != n or len(level) != n:
            raise ConfigError("label arrays must match the number of points")
        if not np.isfinite(xyz).all():
            raise ConfigError("point coordinates must be finite")
        if n and (tree_id.min() < 0):
            raise ConfigError("tree_id must be non-negative")
        if n and (level.min() < 0 or level.max() > 3):
            raise ConfigError("level must be in 0..3")
        if (self.scanline_id is None) != (self.pose_index is None):
            raise ConfigError("scanline_id and pose_index must be both set or both absent")
        object.__setattr__(self, "xyz", _frozen(xyz))
        object.__setattr__(self, "tree_id", _frozen(tree_id.astype(np.uint32)))
        object.__setattr__(self, "level", _frozen(level.astype(np.uint8)))
        if self.scanline_id is not None:
            sid = np.asarray(self.scanline_id).reshape(-1)
            pid = np.asarray(self.pose_index).reshape(-1)
            if len(sid) != n or len(pid) != n:
                raise ConfigError("scan provenance arrays must match the number of points")
            if n and (sid.min() < 0 or pid.min() < 0):
                raise ConfigError("scanline_id and pose_index must be non-negative")
            object.__setattr__(self, "scanline_id", _frozen(sid.astype(np.uint32)))
            object.__setattr__(self, "pose_index", _frozen(pid.astype(np.uint32)))

    @classmethod
    def empty(cls, scan: bool = False, metadata: Optional[dict] = None) -> "LabelledCloud":
        extra = {}
        if scan:
            extra = dict(scanline_id=np.zeros(0, np.uint32), pose_index=np.zeros(0, np.uint32))
        return cls(np.zeros((0, 3)), np.zeros(0, np.uint32), np.zeros(0, np.uint8),
                   metadata=dict(metadata or {}), **extra)

    @classmethod
    def from_points(cls, points: Sequence[LabelledPoint], metadata: Optional[dict] = None) -> "LabelledCloud":
        points = list(points)
        if not points:
            return cls.empty(metadata=metadata)
        scan = points[0].scanline_id is not None
        if any((p.scanline_id is not None) != scan for p in points):
            raise ConfigError("cannot mix scan and source points in one cloud")
        extra = {}
        if scan:
            extra = dict(scanline_id=[p.scanline_id for p in points],
                         pose_index=[p.pose_index for p in points])
        return cls(np.array([[p.x, p.y, p.z] for p in points], dtype=np.float64),
                   np.array([p.tree_id for p in points]), np.array([p.level for p in points]),
                   metadata=dict(metadata or {}), **extra)

    @property
    def is_scan(self) -> bool:
        return self.scanline_id is not None

    def __len__(self) -> int:
        return len(self.xyz)

    def __getitem__(self, i: int) -> LabelledPoint:
        x, y, z = (float(v) for v in self.xyz[i])
        if self.is_scan:
            return LabelledPoint(x, y, z, int(self.tree_id[i]), int(self.level[i]),
                                 int(self.scanline_id[i]), int(self.pose_index[i]))
        return LabelledPoint(x, y, z, int(self.tree_id[i]), int(self.level[i]))

    def __iter__(self) -> Iterator[LabelledPoint]:
        for i in range(len(self)):
            yield self[i]

    def take(self, indices, metadata: Optional[dict] = None) -> "LabelledCloud":
        indices = np.asarray(indices, dtype=np.int64)
        extra = {}
        if self.is_scan:
            extra = dict(scanline_id=self.scanline_id[indices], pose_index=self.pose_index[indices])
        return LabelledCloud(self.xyz[indices], self.tree_id[indices], self.level[indices],
                             metadata=dict(self.metadata if metadata is None else metadata), **extra)

    def with_metadata(self, **updates: Any) -> "LabelledCloud":
        meta = dict(self.metadata)
        meta.update(updates)
        extra = {}
        if self.is_scan:
            extra = dict(scanline_id=self.scanline_id, pose_index=self.pose_index)
        return LabelledCloud(self.xyz, self.tree_id, self.level, metadata=meta, **extra)

    def transformed(self, rotation: np.ndarray, translation) -> "LabelledCloud":
        """Apply ``p -> R p + t`` to every point, keeping labels."""
        xyz = self.xyz @ np.asarray(rotation, dtype=np.float64).T + np.asarray(translation, dtype=np.float64)
        extra = {}
        if self.is_scan:
            extra = dict(scanline_id=self.scanline_id, pose_index=self.pose_index)
        return LabelledCloud(xyz, self.tree_id, self.level, metadata=dict(self.metadata), **extra)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.xyz, self.tree_id, self.level, self.scanline_id, self.pose_index):
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def equals(self, other: "LabelledCloud") -> bool:
        """Exact equality of coordinates and labels (metadata ignored)."""
        if len(self) != len(other) or self.is_scan != other.is_scan:
            return False
        same = (np.array_equal(self.xyz, other.xyz) and np.array_equal(self.tree_id, other.tree_id)
                and np.array_equal(self.level, other.level))
        if same and self.is_scan:
            same = (np.array_equal(self.scanline_id, other.scanline_id)
                    and np.array_equal(self.pose_index, other.pose_index))
        return bool(same)


def concatenate(clouds: Sequence[LabelledCloud], metadata: Optional[dict] = None) -> LabelledCloud:
    clouds = list(clouds)
    if not clouds:
        return LabelledCloud.empty(metadata=metadata)
    scan = clouds[0].is_scan
    if any(c.is_scan != scan for c in clouds):
        raise ConfigError("cannot concatenate scan and source clouds")
    extra = {}
    if scan:
        extra = dict(scanline_id=np.concatenate([c.scanline_id for c in clouds]),
                     pose_index=np.concatenate([c.pose_index for c in clouds]))
    return LabelledCloud(np.concatenate([c.xyz for c in clouds]),
                         np.concatenate([c.tree_id for c in clouds]),
                         np.concatenate([c.level for c in clouds]),
                         metadata=dict(metadata or {}), **extra)


def params_hash(params: Any) -> str:
    """Stable short hash of a JSON-serialisable parameter record."""
    blob = json.dumps(params, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
