"""Scan simulation: posed sensor samples matched against the high-density stand.

For every pose and scan line the samples are walked outwards; each sample
takes the nearest stand point within the search radius, and the line keeps
only the candidate nearest the sensor (its first return). Returned points
get zero-mean isotropic Gaussian noise drawn from a stream keyed by
``(seed, pose_index)`` and indexed by scan line, so output does not depend on
how poses are split between workers.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Tuple

import numpy as np
from numba import njit

from simtreels import rng as rngmod
from simtreels.cloud import _grid
from simtreels.cloud.index import SpatialIndex, build_index, run_chunked
from simtreels.cloud.model import LabelledCloud, params_hash
from simtreels.errors import ConfigError
from simtreels.sensor import SensorShape, check_range_step
from simtreels.trajectory import Trajectory, posed_samples
from simtreels.treegen.mesh import required_spacing


@dataclass(frozen=True)
class ScanParams:
    search_radius: float = 0.02
    noise_sigma: float = 0.0
    seed: int = 0
    dedupe: bool = False

    def __post_init__(self):
        if not (self.search_radius > 0 and math.isfinite(self.search_radius)):
            raise ConfigError(f"search_radius must be > 0, got {self.search_radius}")
        if not (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma)):
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass(eq=False)
class ScanResult:
    cloud: LabelledCloud
    source_index: np.ndarray          # stand index of each returned point
    returns_per_pose: np.ndarray
    hit_rate_per_line: np.ndarray
    params: ScanParams
    extra: dict = field(default_factory=dict)

    @property
    def total_returns(self) -> int:
        return len(self.cloud)

    def stats(self) -> dict:
        return {
            "total_returns": self.total_returns,
            "returns_per_pose": self.returns_per_pose.tolist(),
            "hit_rate_per_line": [round(float(v), 6) for v in self.hit_rate_per_line],
            "params": asdict(self.params),
            "params_hash": self.cloud.metadata.get("params_hash"),
            **self.extra,
        }

    def equals(self, other: "ScanResult") -> bool:
        return (self.cloud.equals(other.cloud) and np.array_equal(self.source_index, other.source_index)
                and np.array_equal(self.returns_per_pose, other.returns_per_pose)
                and np.array_equal(self.hit_rate_per_line, other.hit_rate_per_line))


def first_return(candidates: Iterable[Tuple[float, int, float]]) -> Optional[int]:
    """Pick the candidate nearest the sensor along the beam.

    ``candidates`` are ``(sample_range, point_index, match_distance)``; ties on
    range go to the smaller match distance, then the lower point index.
    """
    best = None
    for rng_, idx, dist in candidates:
        key = (rng_, dist, idx)
        if best is None or key < best:
            best = key
    return None if best is None else int(best[2])


@njit(cache=True, nogil=True)
def _ray_box(px, py, pz, wx, wy, wz, lo, hi):
    tmin = -np.inf
    tmax = np.inf
    p = (px, py, pz)
    w = (wx, wy, wz)
    for a in range(3):
        if abs(w[a]) < 1e-15:
            if p[a] < lo[a] or p[a] > hi[a]:
                return 1.0, -1.0
        else:
            t1 = (lo[a] - p[a]) / w[a]
            t2 = (hi[a] - p[a]) / w[a]
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
    return tmin, tmax


@njit(cache=True, nogil=True)
def _scan_kernel(p_lo, p_hi, rots, pos, dirs, ranges, step, r, r2,
                 origin, cell, dims, tkeys, tstart, tcount, shift, pts, ids,
                 use_coarse, corigin, ccell, cdims, occ, bb_lo, bb_hi,
                 out_idx, out_d2, out_k):
    n_lines = dirs.shape[0]
    n_samples = ranges.shape[0]
    for p in range(p_lo, p_hi):
        px = pos[p, 0]
        py = pos[p, 1]
        pz = pos[p, 2]
        r00 = rots[p, 0, 0]
        r01 = rots[p, 0, 1]
        r02 = rots[p, 0, 2]
        r10 = rots[p, 1, 0]
        r11 = rots[p, 1, 1]
        r12 = rots[p, 1, 2]
        r20 = rots[p, 2, 0]
        r21 = rots[p, 2, 1]
        r22 = rots[p, 2, 2]
        for li in range(n_lines):
            out_idx[p, li] = -1
            out_d2[p, li] = np.inf
            out_k[p, li] = -1
            dx = dirs[li, 0]
            dy = dirs[li, 1]
            dz = dirs[li, 2]
            wx = r00 * dx + r01 * dy + r02 * dz
            wy = r10 * dx + r11 * dy + r12 * dz
            wz = r20 * dx + r21 * dy + r22 * dz
            tmin, tmax = _ray_box(px, py, pz, wx, wy, wz, bb_lo, bb_hi)
            if tmin > tmax or tmax < 0.0:
                continue
            k0 = int(math.floor(tmin / step)) - 2
            k1 = int(math.ceil(tmax / step)) + 1
            if k0 < 0:
                k0 = 0
            if k1 > n_samples - 1:
                k1 = n_samples - 1
            for k in range(k0, k1 + 1):
                t = ranges[k]
                lx = t * dx
                ly = t * dy
                lz = t * dz
                x = px + (r00 * lx + r01 * ly + r02 * lz)
                y = py + (r10 * lx + r11 * ly + r12 * lz)
                z = pz + (r20 * lx + r21 * ly + r22 * lz)
                if use_coarse and not _grid.coarse_hit(x, y, z, corigin, ccell, cdims, occ):
                    continue
                b, d2 = _grid.nearest(x, y, z, r, r2, origin, cell, dims, tkeys, tstart, tcount, shift, pts, ids)
                if b >= 0:
                    # ranges increase along the line, so the first matched sample is the first return
                    out_idx[p, li] = b
                    out_d2[p, li] = d2
                    out_k[p, li] = k
                    break


def _validate(shape: SensorShape, traj: Trajectory, params: ScanParams) -> None:
    if shape.n_lines == 0 or shape.n_samples == 0:
        raise ConfigError("sensor shape has no samples")
    if len(traj) == 0:
        raise ConfigError("trajectory has no poses")
    check_range_step(shape, params.search_radius)


def _warn_spacing(stand: LabelledCloud, params: ScanParams) -> None:
    spacing = stand.metadata.get("sample_spacing") if stand.metadata else None
    need = required_spacing(params.search_radius)
    if spacing is not None and spacing > need * (1 + 1e-9):
        warnings.warn(f"stand sampled at {spacing} m; beams may miss surfaces (need <= {need} m)", stacklevel=3)


def hit_matrix(index: SpatialIndex, shape: SensorShape, traj: Trajectory, search_radius: float,
               workers: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """First-return stand index per (pose, line), -1 for a miss, plus the matched squared distance."""
    n_poses, n_lines = len(traj), shape.n_lines
    out_idx = np.empty((n_poses, n_lines), dtype=np.int64)
    out_d2 = np.empty((n_poses, n_lines), dtype=np.float64)
    out_k = np.empty((n_poses, n_lines), dtype=np.int64)
    rots = traj.rotations()
    pos = traj.positions
    dirs = shape.directions
    ranges = shape.ranges
    r = float(search_radius)
    o, c, d, tk, ts, tc, sh, pts = index.grid_args
    co, cc, cd, occ = index.coarse_args
    use_coarse = r <= 0.5 * cc
    lo, hi = index.bounds
    margin = r * (1 + 1e-6) + 1e-9
    bb_lo = lo - margin
    bb_hi = hi + margin

    def work(p_lo, p_hi):
        _scan_kernel(p_lo, p_hi, rots, pos, dirs, ranges, shape.range_step, r, r * r,
                     o, c, d, tk, ts, tc, sh, pts, index._ids,
                     use_coarse, co, cc, cd, occ, bb_lo, bb_hi, out_idx, out_d2, out_k)

    run_chunked(work, n_poses, workers)
    return out_idx, out_d2


def _assemble(stand: LabelledCloud, hit_idx: np.ndarray, shape: SensorShape, traj: Trajectory,
              params: ScanParams, extra_meta: Optional[dict] = None) -> ScanResult:
    n_poses, n_lines = hit_idx.shape
    pose_i, line_i = np.nonzero(hit_idx >= 0)
    src = hit_idx[pose_i, line_i]
    xyz = stand.xyz[src].copy()
    if params.noise_sigma > 0 and len(src):
        bounds = np.flatnonzero(np.r_[True, pose_i[1:] != pose_i[:-1], True])
        for a, b in zip(bounds[:-1], bounds[1:]):
            p = int(pose_i[a])
            z = rngmod.stream(params.seed, rngmod.NOISE, p).standard_normal((n_lines, 3))
            xyz[a:b] += params.noise_sigma * z[line_i[a:b]]
    if params.dedupe and len(src):
        _, first = np.unique(src, return_index=True)
        keep = np.sort(first)
        pose_i, line_i, src, xyz = pose_i[keep], line_i[keep], src[keep], xyz[keep]
    meta = {
        "stage": "scan",
        "seed": params.seed,
        "scan_params": asdict(params),
        "sensor": {"kind": shape.kind, **shape.meta},
        "trajectory": {k: v for k, v in traj.meta.items() if k != "segments"},
        "n_poses": n_poses,
        "stand_hash": stand.metadata.get("params_hash"),
    }
    meta["params_hash"] = params_hash(meta)
    meta.update(extra_meta or {})
    cloud = LabelledCloud(xyz, stand.tree_id[src], stand.level[src],
                          scanline_id=shape.scanline_ids[line_i], pose_index=pose_i, metadata=meta)
    return ScanResult(cloud, src.astype(np.int64), np.bincount(pose_i, minlength=n_poses),
                      (hit_idx >= 0).mean(axis=0), params)


def simulate_scan(index: SpatialIndex, shape: SensorShape, traj: Trajectory, params: ScanParams,
                  workers: int = 1) -> ScanResult:
    """Scan the stand behind ``index`` with ``shape`` moved along ``traj``."""
    _validate(shape, traj, params)
    stand = index.source
    _warn_spacing(stand, params)
    hit_idx, _ = hit_matrix(index, shape, traj, params.search_radius, workers)
    return _assemble(stand, hit_idx, shape, traj, params)


def brute_force_scan(stand: LabelledCloud, shape: SensorShape, traj: Trajectory, params: ScanParams,
                     chunk_elems: int = 4_000_000) -> ScanResult:
    """Reference scan: exhaustive nearest search for every sample, then :func:`first_return` per line."""
    _validate(shape, traj, params)
    n_poses, n_lines, n_samples = len(traj), shape.n_lines, shape.n_samples
    hit_idx = np.full((n_poses, n_lines), -1, dtype=np.int64)
    if len(stand) == 0:
        return _assemble(stand, hit_idx, shape, traj, params)
    r2 = float(params.search_radius) * float(params.search_radius)
    pts = stand.xyz
    px, py, pz = pts[:, 0], pts[:, 1], pts[:, 2]
    rots = traj.rotations()
    ranges = shape.ranges
    per_chunk = max(1, chunk_elems // len(pts))
    for p in range(n_poses):
        q = posed_samples(shape, traj.positions[p], rots[p]).reshape(-1, 3)
        best = np.full(len(q), -1, dtype=np.int64)
        best_d2 = np.full(len(q), np.inf)
        for lo in range(0, len(q), per_chunk):
            qc = q[lo:lo + per_chunk]
            dx = qc[:, 0:1] - px[None, :]
            dy = qc[:, 1:2] - py[None, :]
            dz = qc[:, 2:3] - pz[None, :]
            d2 = dx * dx + dy * dy + dz * dz
            d2[d2 > r2] = np.inf
            j = np.argmin(d2, axis=1)
            dj = d2[np.arange(len(qc)), j]
            ok = np.isfinite(dj)
            best[lo:lo + per_chunk] = np.where(ok, j, -1)
            best_d2[lo:lo + per_chunk] = dj
        best = best.reshape(n_lines, n_samples)
        dist = np.sqrt(best_d2.reshape(n_lines, n_samples))
        for li in range(n_lines):
            ks = np.flatnonzero(best[li] >= 0)
            pick = first_return((ranges[k], int(best[li, k]), dist[li, k]) for k in ks)
            if pick is not None:
                hit_idx[p, li] = pick
    return _assemble(stand, hit_idx, shape, traj, params)


def scan_stand(stand: LabelledCloud, shape: SensorShape, traj: Trajectory, params: ScanParams,
               workers: int = 1, index: Optional[SpatialIndex] = None) -> ScanResult:
    """Convenience wrapper: build the index (cell = search radius) and scan."""
    if len(stand) == 0:
        _validate(shape, traj, params)
        return _assemble(stand, np.full((len(traj), shape.n_lines), -1, np.int64), shape, traj, params)
    if index is None:
        index = build_index(stand, params.search_radius)
    return simulate_scan(index, shape, traj, params, workers)


def control_sample(stand: LabelledCloud, target_count: int, seed: int) -> LabelledCloud:
    """Uniform subsample without replacement, kept in stand order."""
    n = len(stand)
    if not (isinstance(target_count, (int, np.integer)) and target_count > 0):
        raise ConfigError(f"target_count must be a positive integer, got {target_count!r}")
    if target_count > n:
        raise ConfigError(f"target_count {target_count} exceeds stand size {n}")
    g = rngmod.stream(seed)
    idx = np.sort(g.choice(n, size=int(target_count), replace=False))
    meta = {"stage": "control", "seed": int(seed), "target_count": int(target_count),
            "stand_hash": stand.metadata.get("params_hash")}
    meta["params_hash"] = params_hash(meta)
    return LabelledCloud(stand.xyz[idx], stand.tree_id[idx], stand.level[idx], metadata=meta)


def write_scan_stats(result: ScanResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(result.stats(), fh, sort_keys=True, indent=1)
        fh.write("\n")
