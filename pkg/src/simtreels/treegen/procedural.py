"""Recursive tapered-cylinder tree model with disk leaves, sampled straight to points.

Stems are polylines of frusta. Children attach on the parent axis, rotated
away from it by a down angle about an axis spun around the parent (golden
angle phyllotaxis plus jitter). Branches bend towards vertical by their
curvature; the trunk bends about a random horizontal axis. Terminal stems
carry ``leaves_per_tip`` disk leaves on their outer part.

Every stem draws from its own stream keyed by its path in the branch tree,
so editing one branch leaves its siblings unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from simtreels import rng as rngmod
from simtreels.cloud.model import LabelledCloud, params_hash
from simtreels.errors import ConfigError
from simtreels.treegen.definition import LevelParams, TreeDefinition

_UP = np.array([0.0, 0.0, 1.0])
_GOLDEN_ANGLE = math.radians(137.50776)
_SEG_LEN = 0.15          # m, target frustum length
_SEG_BEND = math.radians(6.0)


@dataclass
class Stem:
    path: Tuple[int, ...]
    level: int
    points: np.ndarray    # (n+1, 3) axis polyline
    radii: np.ndarray     # (n+1,)
    length: float
    terminal: bool = True


def _draw(g: np.random.Generator, pair, lo: float, hi: float) -> float:
    mean, jitter = pair
    v = mean + jitter * g.uniform(-1.0, 1.0) if jitter else mean
    return float(min(max(v, lo), hi))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _perp_basis(d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = _unit(np.cross(d, helper))
    return u, np.cross(d, u)


def _rotate(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation of ``v`` about unit ``axis``."""
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1 - c)


def _polyline(origin, direction, length, bend, bend_axis) -> np.ndarray:
    n = max(1, int(math.ceil(length / _SEG_LEN)), int(math.ceil(bend / _SEG_BEND)))
    seg = length / n
    step = bend / n
    pts = np.empty((n + 1, 3))
    pts[0] = origin
    d = direction
    for i in range(n):
        # half-step rotation keeps the total bend at `bend` over n segments
        d = _rotate(d, bend_axis, 0.5 * step) if step else d
        pts[i + 1] = pts[i] + seg * d
        d = _rotate(d, bend_axis, 0.5 * step) if step else d
    return pts


def _upward_axis(d: np.ndarray, g: np.random.Generator) -> np.ndarray:
    a = np.cross(d, _UP)
    if np.linalg.norm(a) < 1e-6:
        u, v = _perp_basis(d)
        phi = g.uniform(0, 2 * math.pi)
        return math.cos(phi) * u + math.sin(phi) * v
    return _unit(a)


def _point_at(stem: Stem, f: float) -> Tuple[np.ndarray, np.ndarray, float]:
    """Axis point, local direction and radius at arc fraction ``f``."""
    n = len(stem.points) - 1
    x = min(max(f, 0.0), 1.0) * n
    i = min(int(x), n - 1)
    t = x - i
    p = stem.points[i] + t * (stem.points[i + 1] - stem.points[i])
    d = _unit(stem.points[i + 1] - stem.points[i])
    r = stem.radii[i] + t * (stem.radii[i + 1] - stem.radii[i])
    return p, d, float(r)


def build_skeleton(defn: TreeDefinition, seed: int) -> List[Stem]:
    """All stems of one tree in depth-first order."""
    stems: List[Stem] = []

    def grow(level: int, path, origin, direction, length, base_radius, g, lp: LevelParams):
        taper = _draw(g, lp.taper, 1e-3, 1.0)
        bend = math.radians(_draw(g, lp.curvature, 0.0, 179.0))
        if level == 0:
            phi = g.uniform(0, 2 * math.pi)
            axis = np.array([math.cos(phi), math.sin(phi), 0.0])
        else:
            axis = _upward_axis(direction, g)
        pts = _polyline(origin, direction, length, bend, axis)
        frac = np.linspace(0.0, 1.0, len(pts))
        radii = base_radius * (1.0 - (1.0 - taper) * frac)
        stem = Stem(tuple(path), level, pts, radii, length)
        stems.append(stem)
        if level + 1 >= defn.levels:
            return
        child_lp = defn.level_params[level + 1]
        n_children = int(round(_draw(g, child_lp.child_count, 0.0, 1e6)))
        stem.terminal = n_children == 0
        lo, hi = child_lp.start_fraction_range
        for k in range(n_children):
            cg = rngmod.stream(seed, *path, k)
            f = lo + (hi - lo) * (k + cg.uniform()) / n_children
            p, d, r_parent = _point_at(stem, f)
            u, v = _perp_basis(d)
            phi = k * _GOLDEN_ANGLE + cg.uniform(-0.25, 0.25)
            spin = math.cos(phi) * u + math.sin(phi) * v
            down = math.radians(_draw(cg, child_lp.down_angle, 0.0, 179.0))
            child_dir = _unit(_rotate(d, _unit(np.cross(d, spin)), down))
            child_len = length * _draw(cg, child_lp.length_ratio, 1e-3, 1.0)
            child_r = min(r_parent, r_parent * _draw(cg, child_lp.base_radius_ratio, 1e-3, 1.0))
            grow(level + 1, (*path, k), p, child_dir, child_len, max(child_r, 1e-4), cg, child_lp)

    g0 = rngmod.stream(seed)
    grow(0, (), np.zeros(3), _UP.copy(), defn.trunk_height, defn.trunk_base_radius, g0, defn.level_params[0])
    return stems


def _sample_stem(stem: Stem, spacing: float, g: np.random.Generator) -> np.ndarray:
    p0, p1 = stem.points[:-1], stem.points[1:]
    r0, r1 = stem.radii[:-1], stem.radii[1:]
    axis = p1 - p0
    h = np.linalg.norm(axis, axis=1)
    area = math.pi * (r0 + r1) * np.sqrt(h * h + (r0 - r1) ** 2)
    counts = g.poisson(area / spacing**2)
    total = int(counts.sum())
    if total == 0:
        return np.zeros((0, 3))
    seg = np.repeat(np.arange(len(h)), counts)
    a, b = r0[seg], r1[seg]
    u = g.uniform(size=total)
    # inverse CDF of a density proportional to the linearly tapering radius
    dr = b - a
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(dr) > 1e-12 * np.maximum(a, 1e-12),
                     (-a + np.sqrt(a * a + u * (b * b - a * a))) / dr, u)
    t = np.clip(t, 0.0, 1.0)
    theta = g.uniform(0.0, 2 * math.pi, size=total)
    d = axis / h[:, None]
    helper = np.where(np.abs(d[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(d, e1)
    r = a + t * dr
    return (p0[seg] + t[:, None] * axis[seg]
            + r[:, None] * (np.cos(theta)[:, None] * e1[seg] + np.sin(theta)[:, None] * e2[seg]))


def _sample_leaves(stem: Stem, n_leaves: int, leaf_radius: float, spacing: float,
                   g: np.random.Generator) -> np.ndarray:
    if n_leaves == 0:
        return np.zeros((0, 3))
    centres = np.empty((n_leaves, 3))
    for i, f in enumerate(g.uniform(0.4, 1.0, size=n_leaves)):
        p, d, r = _point_at(stem, f)
        u, v = _perp_basis(d)
        phi = g.uniform(0, 2 * math.pi)
        centres[i] = p + (r + leaf_radius) * (math.cos(phi) * u + math.sin(phi) * v)
    normals = g.normal(size=(n_leaves, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    counts = g.poisson(math.pi * leaf_radius**2 / spacing**2, size=n_leaves)
    total = int(counts.sum())
    if total == 0:
        return np.zeros((0, 3))
    which = np.repeat(np.arange(n_leaves), counts)
    n = normals[which]
    helper = np.where(np.abs(n[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    rr = leaf_radius * np.sqrt(g.uniform(size=total))
    th = g.uniform(0, 2 * math.pi, size=total)
    return centres[which] + rr[:, None] * (np.cos(th)[:, None] * e1 + np.sin(th)[:, None] * e2)


def generate_tree(defn: TreeDefinition, seed: int) -> LabelledCloud:
    """High-density labelled cloud of one tree, trunk base at the origin, +Z up.

    Stems are labelled ``min(level, 2)``, leaves 3; ``tree_id`` is ``seed``.
    """
    if not isinstance(defn, TreeDefinition):
        raise ConfigError("generate_tree needs a TreeDefinition")
    defn.validate()
    if not (isinstance(seed, (int, np.integer)) and 0 <= seed < 2**32):
        raise ConfigError(f"seed must be an integer in [0, 2^32), got {seed!r}")
    seed = int(seed)
    chunks, labels = [], []
    for stem in build_skeleton(defn, seed):
        pts = _sample_stem(stem, defn.sample_spacing, rngmod.stream(seed, *stem.path, rngmod.SURFACE))
        chunks.append(pts)
        labels.append(np.full(len(pts), min(stem.level, 2), np.uint8))
        if stem.terminal and defn.leaves_per_tip:
            leaves = _sample_leaves(stem, defn.leaves_per_tip, defn.leaf_radius, defn.sample_spacing,
                                    rngmod.stream(seed, *stem.path, rngmod.LEAVES))
            chunks.append(leaves)
            labels.append(np.full(len(leaves), 3, np.uint8))
    xyz = np.vstack(chunks)
    level = np.concatenate(labels)
    meta = {"stage": "tree", "definition": defn.name, "seed": seed,
            "params_hash": params_hash(defn.to_dict()), "sample_spacing": defn.sample_spacing}
    return LabelledCloud(xyz, np.full(len(xyz), seed, np.uint32), level, metadata=meta)
