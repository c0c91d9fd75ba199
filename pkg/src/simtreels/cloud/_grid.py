"""Numba kernels for the uniform hash grid.

Points are stored sorted by linear cell key; an open-addressing table maps a
cell key to its ``(start, count)`` run in the sorted arrays. Within a run the
points keep ascending source order, which the tie-break rules rely on.

Distances are always computed as ``dx*dx + dy*dy + dz*dz`` with
``d = query - point``. The brute-force oracle uses the same expression, so
the two paths agree bit for bit.
"""

import math

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_EMPTY = -1
# widens the cell range searched around a query so rounding never drops a point
_PAD_REL = 1e-9
_PAD_ABS = 1e-12


@njit(cache=True, nogil=True)
def _slot(key, shift):
    return np.int64((np.uint64(key) * _GOLDEN) >> np.uint64(shift))


@njit(cache=True)
def build_table(cell_keys, starts, counts, table_bits):
    size = 1 << table_bits
    shift = 64 - table_bits
    mask = size - 1
    tkeys = np.full(size, _EMPTY, dtype=np.int64)
    tstart = np.zeros(size, dtype=np.int64)
    tcount = np.zeros(size, dtype=np.int64)
    for c in range(cell_keys.shape[0]):
        h = _slot(cell_keys[c], shift)
        while tkeys[h] != _EMPTY:
            h = (h + 1) & mask
        tkeys[h] = cell_keys[c]
        tstart[h] = starts[c]
        tcount[h] = counts[c]
    return tkeys, tstart, tcount


@njit(cache=True, nogil=True)
def lookup(key, tkeys, shift):
    mask = tkeys.shape[0] - 1
    h = _slot(key, shift)
    while True:
        k = tkeys[h]
        if k == key:
            return h
        if k == _EMPTY:
            return -1
        h = (h + 1) & mask


@njit(cache=True, nogil=True)
def _axis_range(v, r, o, c, n):
    pad = r * (1.0 + _PAD_REL) + _PAD_ABS
    lo = math.floor((v - pad - o) / c)
    hi = math.floor((v + pad - o) / c)
    if lo < 0:
        lo = 0
    if hi > n - 1:
        hi = n - 1
    return np.int64(lo), np.int64(hi)


@njit(cache=True, nogil=True)
def nearest(x, y, z, r, r2, origin, cell, dims, tkeys, tstart, tcount, shift, pts, ids):
    """Closest point with squared distance <= r2; ties go to the lowest source id.

    Returns ``(source_id, d2)``; ``source_id`` is -1 when nothing qualifies.
    """
    best = -1
    best_d2 = np.inf
    ix0, ix1 = _axis_range(x, r, origin[0], cell, dims[0])
    iy0, iy1 = _axis_range(y, r, origin[1], cell, dims[1])
    iz0, iz1 = _axis_range(z, r, origin[2], cell, dims[2])
    ny = dims[1]
    nz = dims[2]
    for ix in range(ix0, ix1 + 1):
        for iy in range(iy0, iy1 + 1):
            base = (ix * ny + iy) * nz
            for iz in range(iz0, iz1 + 1):
                h = lookup(base + iz, tkeys, shift)
                if h < 0:
                    continue
                s = tstart[h]
                for j in range(s, s + tcount[h]):
                    dx = x - pts[j, 0]
                    dy = y - pts[j, 1]
                    dz = z - pts[j, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 <= r2:
                        sid = ids[j]
                        if d2 < best_d2 or (d2 == best_d2 and sid < best):
                            best = sid
                            best_d2 = d2
    return best, best_d2


@njit(cache=True, nogil=True)
def any_within(x, y, z, r, r2, origin, cell, dims, tkeys, tstart, tcount, shift, pts):
    ix0, ix1 = _axis_range(x, r, origin[0], cell, dims[0])
    iy0, iy1 = _axis_range(y, r, origin[1], cell, dims[1])
    iz0, iz1 = _axis_range(z, r, origin[2], cell, dims[2])
    ny = dims[1]
    nz = dims[2]
    for ix in range(ix0, ix1 + 1):
        for iy in range(iy0, iy1 + 1):
            base = (ix * ny + iy) * nz
            for iz in range(iz0, iz1 + 1):
                h = lookup(base + iz, tkeys, shift)
                if h < 0:
                    continue
                s = tstart[h]
                for j in range(s, s + tcount[h]):
                    dx = x - pts[j, 0]
                    dy = y - pts[j, 1]
                    dz = z - pts[j, 2]
                    if dx * dx + dy * dy + dz * dz <= r2:
                        return True
    return False


@njit(cache=True, nogil=True)
def coarse_hit(x, y, z, corigin, ccell, cdims, occ):
    """False when the dilated coarse grid proves no point lies nearby."""
    ix = math.floor((x - corigin[0]) / ccell)
    iy = math.floor((y - corigin[1]) / ccell)
    iz = math.floor((z - corigin[2]) / ccell)
    if ix < 0 or iy < 0 or iz < 0 or ix >= cdims[0] or iy >= cdims[1] or iz >= cdims[2]:
        return False
    return occ[ix, iy, iz] != 0


@njit(cache=True, nogil=True)
def nearest_batch(q, r, r2, origin, cell, dims, tkeys, tstart, tcount, shift, pts, ids,
                  out_idx, out_d2, lo, hi):
    for i in range(lo, hi):
        b, d2 = nearest(q[i, 0], q[i, 1], q[i, 2], r, r2, origin, cell, dims,
                        tkeys, tstart, tcount, shift, pts, ids)
        out_idx[i] = b
        out_d2[i] = d2


@njit(cache=True, nogil=True)
def any_within_batch(q, r, r2, origin, cell, dims, tkeys, tstart, tcount, shift, pts,
                     use_coarse, corigin, ccell, cdims, occ, out, lo, hi):
    for i in range(lo, hi):
        x = q[i, 0]
        y = q[i, 1]
        z = q[i, 2]
        if use_coarse and not coarse_hit(x, y, z, corigin, ccell, cdims, occ):
            out[i] = False
            continue
        out[i] = any_within(x, y, z, r, r2, origin, cell, dims, tkeys, tstart, tcount, shift, pts)


@njit(cache=True, nogil=True)
def collect_within(x, y, z, r, r2, origin, cell, dims, tkeys, tstart, tcount, shift, pts, ids,
                   scan_all):
    """All (source_id, d2) pairs with d2 <= r2, unsorted."""
    n_found = 0
    out_id = np.empty(16, dtype=np.int64)
    out_d2 = np.empty(16, dtype=np.float64)
    ix0, ix1 = _axis_range(x, r, origin[0], cell, dims[0])
    iy0, iy1 = _axis_range(y, r, origin[1], cell, dims[1])
    iz0, iz1 = _axis_range(z, r, origin[2], cell, dims[2])
    ny = dims[1]
    nz = dims[2]
    if scan_all:
        for j in range(pts.shape[0]):
            dx = x - pts[j, 0]
            dy = y - pts[j, 1]
            dz = z - pts[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 <= r2:
                if n_found == out_id.shape[0]:
                    out_id = np.concatenate((out_id, np.empty(n_found, dtype=np.int64)))
                    out_d2 = np.concatenate((out_d2, np.empty(n_found, dtype=np.float64)))
                out_id[n_found] = ids[j]
                out_d2[n_found] = d2
                n_found += 1
        return out_id[:n_found], out_d2[:n_found]
    for ix in range(ix0, ix1 + 1):
        for iy in range(iy0, iy1 + 1):
            base = (ix * ny + iy) * nz
            for iz in range(iz0, iz1 + 1):
                h = lookup(base + iz, tkeys, shift)
                if h < 0:
                    continue
                s = tstart[h]
                for j in range(s, s + tcount[h]):
                    dx = x - pts[j, 0]
                    dy = y - pts[j, 1]
                    dz = z - pts[j, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 <= r2:
                        if n_found == out_id.shape[0]:
                            out_id = np.concatenate((out_id, np.empty(n_found, dtype=np.int64)))
                            out_d2 = np.concatenate((out_d2, np.empty(n_found, dtype=np.float64)))
                        out_id[n_found] = ids[j]
                        out_d2[n_found] = d2
                        n_found += 1
    return out_id[:n_found], out_d2[:n_found]
