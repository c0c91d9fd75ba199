from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from simtreels import rng as rngmod
from simtreels.cloud.model import LabelledCloud
from simtreels.errors import ConfigError, DegenerateMesh, InputFileError


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray      # (V, 3) metres
    faces: np.ndarray         # (F, 3) vertex indices
    face_label: np.ndarray    # (F,) level 0..3
    face_tree_id: np.ndarray  # (F,)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        lab = np.asarray(self.face_label, dtype=np.int64).reshape(-1)
        tid = np.asarray(self.face_tree_id, dtype=np.int64).reshape(-1)
        if len(f) == 0:
            raise ConfigError("mesh has no faces")
        if len(lab) != len(f) or len(tid) != len(f):
            raise ConfigError("face_label and face_tree_id need one entry per face")
        if f.min() < 0 or f.max() >= len(v):
            raise ConfigError("face vertex index out of range")
        if lab.min() < 0 or lab.max() > 3:
            raise ConfigError("face labels must be in 0..3")
        if tid.min() < 0:
            raise ConfigError("face tree ids must be non-negative")
        if not np.isfinite(v).all():
            raise ConfigError("mesh vertices must be finite")
        for name, arr in (("vertices", v), ("faces", f), ("face_label", lab), ("face_tree_id", tid)):
            object.__setattr__(self, name, arr)

    def areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def required_spacing(search_radius: float, safety: float = 1.0) -> float:
    """Sample spacing that keeps any beam crossing a surface within reach of a sample."""
    if not search_radius > 0:
        raise ConfigError("search_radius must be > 0")
    if not safety >= 1:
        raise ConfigError("safety factor must be >= 1")
    return search_radius / (2.0 * safety)


def sample_mesh(mesh: TriangleMesh, spacing: float, seed: int) -> LabelledCloud:
    """Uniform area-weighted surface samples, about ``area / spacing**2`` per face (Poisson)."""
    if not spacing > 0:
        raise ConfigError("spacing must be > 0")
    areas = mesh.areas()
    if not np.isfinite(areas).all():
        raise DegenerateMesh("mesh has non-finite triangle areas")
    if areas.sum() <= 0:
        raise DegenerateMesh("mesh has zero total area")
    g = rngmod.stream(seed, rngmod.SURFACE)
    counts = g.poisson(areas / spacing**2)
    face = np.repeat(np.arange(len(areas)), counts)
    n = len(face)
    u = g.uniform(size=n)
    v = g.uniform(size=n)
    su = np.sqrt(u)
    w0, w1, w2 = 1.0 - su, su * (1.0 - v), su * v
    tri = mesh.faces[face]
    vt = mesh.vertices
    xyz = w0[:, None] * vt[tri[:, 0]] + w1[:, None] * vt[tri[:, 1]] + w2[:, None] * vt[tri[:, 2]]
    meta = {"stage": "mesh_sample", "seed": int(seed), "sample_spacing": float(spacing), "faces": len(areas)}
    return LabelledCloud(xyz, mesh.face_tree_id[face], mesh.face_label[face], metadata=meta)


def default_label(name: str) -> int:
    """Map an OBJ group/material name to a branch level.

    ``trunk`` -> 0; ``stem``/``branch`` with a digit -> that digit clamped to
    1..2; ``leaf``/``leaves`` -> 3. Anything else is an error.
    """
    low = name.lower()
    if "leaf" in low or "leaves" in low:
        return 3
    if "trunk" in low:
        return 0
    if "stem" in low or "branch" in low:
        m = re.search(r"\d+", low)
        if m:
            return min(max(int(m.group()), 1), 2)
    raise ConfigError(f"cannot map OBJ group {name!r} to a branch level; supply a label table")


def load_obj(path, tree_id: int = 0, label_map: Optional[Dict[str, int]] = None) -> TriangleMesh:
    """Read ``v``/``f`` records; ``g``/``usemtl`` names select the label of following faces.

    Polygons are fan-triangulated. ``label_map`` (exact names) takes
    precedence over :func:`default_label`.
    """
    path = Path(path)
    if not path.is_file():
        raise InputFileError(f"cannot read {path}: no such file")
    verts, faces, labels = [], [], []
    current: Optional[int] = None
    cache: Dict[str, int] = {}

    def resolve(name: str) -> int:
        if name not in cache:
            if label_map is not None and name in label_map:
                lv = int(label_map[name])
                if lv not in (0, 1, 2, 3):
                    raise ConfigError(f"label table maps {name!r} to invalid level {lv}")
                cache[name] = lv
            else:
                cache[name] = default_label(name)
        return cache[name]

    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag in ("g", "usemtl", "o") and len(parts) > 1:
                if tag == "o" and current is not None:
                    continue
                current = resolve(" ".join(parts[1:]))
            elif tag == "f":
                if current is None:
                    raise ConfigError(f"{path}:{lineno}: face before any group/material name")
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
                    labels.append(current)
    if not faces:
        raise ConfigError(f"{path}: no faces")
    return TriangleMesh(np.array(verts), np.array(faces), np.array(labels), np.full(len(faces), tree_id))


def mesh_area(mesh: TriangleMesh) -> float:
    return float(math.fsum(mesh.areas()))
