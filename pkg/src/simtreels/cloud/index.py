from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from simtreels.cloud import _grid
from simtreels.cloud.model import LabelledCloud
from simtreels.errors import ConfigError, EmptyCloud

# dense coarse occupancy grids are capped at this many cells
_MAX_COARSE_CELLS = 64_000_000


def default_workers() -> int:
    """Worker count from ``SIMTREELS_WORKERS`` (default 1); validity is checked by the caller."""
    raw = os.environ.get("SIMTREELS_WORKERS", "1")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"SIMTREELS_WORKERS must be an integer, got {raw!r}") from None


def run_chunked(fn, n: int, workers: int, min_chunk: int = 1):
    """Call ``fn(lo, hi)`` over ``[0, n)`` split into contiguous chunks.

    Chunks write disjoint slices of preallocated outputs, so the result does
    not depend on ``workers``.
    """
    workers = max(1, int(workers))
    if n == 0:
        return
    if workers == 1 or n <= min_chunk:
        fn(0, n)
        return
    n_chunks = min(n, workers * 4)
    bounds = np.linspace(0, n, n_chunks + 1).astype(np.int64)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        for f in futures:
            f.result()


class SpatialIndex:
    """Immutable hash-grid index over a :class:`LabelledCloud` for radius queries.

    Cells are keyed by ``floor((p - origin) / cell_size)``. A coarse dense
    occupancy grid (dilated by one cell) lets batch kernels reject queries in
    empty space with a single lookup.
    """

    def __init__(self, cloud: LabelledCloud, cell_size: float):
        if len(cloud) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        if not (cell_size > 0 and math.isfinite(cell_size)):
            raise ConfigError(f"cell_size must be > 0, got {cell_size}")
        self.source = cloud
        self.cell_size = float(cell_size)
        xyz = cloud.xyz
        lo = xyz.min(axis=0)
        hi = xyz.max(axis=0)
        self.bounds = (lo.copy(), hi.copy())
        c = self.cell_size
        self.origin = lo - c
        self.dims = (np.floor((hi - self.origin) / c).astype(np.int64) + 2)
        if float(np.prod(self.dims.astype(np.float64))) > 9e18:
            raise ConfigError("cell_size too small for the cloud extent")

        ijk = np.floor((xyz - self.origin) / c).astype(np.int64)
        keys = (ijk[:, 0] * self.dims[1] + ijk[:, 1]) * self.dims[2] + ijk[:, 2]
        del ijk
        order = np.argsort(keys, kind="stable")
        skeys = keys[order]
        del keys
        run_start = np.flatnonzero(np.r_[True, skeys[1:] != skeys[:-1]])
        cell_keys = skeys[run_start]
        counts = np.diff(np.r_[run_start, len(skeys)])
        del skeys
        self.n_cells = len(cell_keys)
        bits = max(4, int(math.ceil(math.log2(2 * self.n_cells + 1))))
        self._shift = 64 - bits
        self._tkeys, self._tstart, self._tcount = _grid.build_table(
            cell_keys, run_start.astype(np.int64), counts.astype(np.int64), bits)
        self._pts = np.ascontiguousarray(xyz[order])
        self._ids = order.astype(np.int64)
        self._build_coarse(xyz)
        for arr in (self._tkeys, self._tstart, self._tcount, self._pts, self._ids, self._occ):
            arr.setflags(write=False)

    def _build_coarse(self, xyz: np.ndarray) -> None:
        lo, hi = self.bounds
        extent = np.maximum(hi - lo, self.cell_size)
        cc = max(8 * self.cell_size, 0.1)
        while float(np.prod(np.floor(extent / cc) + 3)) > _MAX_COARSE_CELLS:
            cc *= 1.5
        self.coarse_cell = cc
        self.coarse_origin = lo - cc
        self.coarse_dims = np.floor((hi - self.coarse_origin) / cc).astype(np.int64) + 2
        ijk = np.floor((xyz - self.coarse_origin) / cc).astype(np.int64)
        occ = np.zeros(tuple(self.coarse_dims), dtype=bool)
        occ[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = True
        self._occ = ndimage.binary_dilation(occ, structure=np.ones((3, 3, 3), bool)).astype(np.uint8)

    # argument bundles for the numba kernels
    @property
    def grid_args(self) -> tuple:
        return (self.origin, self.cell_size, self.dims, self._tkeys, self._tstart, self._tcount,
                self._shift, self._pts)

    @property
    def coarse_args(self) -> tuple:
        return (self.coarse_origin, self.coarse_cell, self.coarse_dims, self._occ)

    def __len__(self) -> int:
        return len(self.source)

    def nearest_within(self, query, r: float) -> Optional[Tuple[int, float]]:
        """Closest source point within ``r`` of ``query`` as ``(index, distance)``, or ``None``."""
        _check_radius(r)
        x, y, z = (float(v) for v in query)
        o, c, d, tk, ts, tc, sh, pts = self.grid_args
        best, d2 = _grid.nearest(x, y, z, float(r), float(r) * float(r), o, c, d, tk, ts, tc, sh, pts, self._ids)
        if best < 0:
            return None
        return int(best), math.sqrt(d2)

    def all_within(self, query, r: float) -> List[Tuple[int, float]]:
        """Every source point within ``r``, sorted by ``(distance, index)``."""
        _check_radius(r)
        x, y, z = (float(v) for v in query)
        r = float(r)
        span = np.minimum(np.ceil(2 * r / self.cell_size) + 1, self.dims.astype(np.float64))
        scan_all = float(np.prod(span)) > self.n_cells
        o, c, d, tk, ts, tc, sh, pts = self.grid_args
        ids, d2 = _grid.collect_within(x, y, z, r, r * r, o, c, d, tk, ts, tc, sh, pts, self._ids, scan_all)
        order = np.lexsort((ids, d2))
        return [(int(ids[i]), math.sqrt(d2[i])) for i in order]

    def nearest_batch(self, queries: np.ndarray, r: float, workers: int = 1) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorised :meth:`nearest_within`: returns ``(index, distance)`` arrays, index -1 on miss."""
        _check_radius(r)
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        out_idx = np.empty(len(q), dtype=np.int64)
        out_d2 = np.empty(len(q), dtype=np.float64)
        o, c, d, tk, ts, tc, sh, pts = self.grid_args
        r = float(r)

        def work(lo, hi):
            _grid.nearest_batch(q, r, r * r, o, c, d, tk, ts, tc, sh, pts, self._ids, out_idx, out_d2, lo, hi)

        run_chunked(work, len(q), workers, min_chunk=4096)
        dist = np.sqrt(out_d2)
        dist[out_idx < 0] = np.inf
        return out_idx, dist

    def any_within_batch(self, queries: np.ndarray, r: float, workers: int = 1) -> np.ndarray:
        """Boolean mask: does any source point lie within ``r`` of each query."""
        _check_radius(r)
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        out = np.empty(len(q), dtype=np.bool_)
        o, c, d, tk, ts, tc, sh, pts = self.grid_args
        co, cc, cd, occ = self.coarse_args
        r = float(r)
        use_coarse = r <= 0.5 * self.coarse_cell

        def work(lo, hi):
            _grid.any_within_batch(q, r, r * r, o, c, d, tk, ts, tc, sh, pts,
                                   use_coarse, co, cc, cd, occ, out, lo, hi)

        run_chunked(work, len(q), workers, min_chunk=4096)
        return out


def _check_radius(r: float) -> None:
    if not (r > 0):
        raise ConfigError(f"search radius must be > 0, got {r}")


def build_index(cloud: LabelledCloud, cell_size: float) -> SpatialIndex:
    return SpatialIndex(cloud, cell_size)


def nearest_within(index: SpatialIndex, query, r: float) -> Optional[Tuple[int, float]]:
    return index.nearest_within(query, r)


def all_within(index: SpatialIndex, query, r: float) -> List[Tuple[int, float]]:
    return index.all_within(query, r)
