"""Validation metrics: voxel density statistics, normalised density profiles,
occlusion maps and the per-stand summary report."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from simtreels.cloud.index import build_index
from simtreels.cloud.model import LabelledCloud
from simtreels.errors import ConfigError, EmptyCloud

DEFAULT_VOXEL_EDGE = 0.5


@dataclass(frozen=True)
class DensityStats:
    voxel_edge: float
    occupied_voxels: int
    mean_density: float
    stddev_density: float
    total_points: int

    @property
    def cv(self) -> float:
        """Coefficient of variation, stddev / mean."""
        return self.stddev_density / self.mean_density if self.mean_density else 0.0


def voxel_counts(xyz: np.ndarray, voxel_edge: float) -> Tuple[np.ndarray, np.ndarray]:
    """Occupied voxel integer coordinates ``(M, 3)`` and their point counts, anchored at the origin."""
    ijk = np.floor(xyz / voxel_edge).astype(np.int64)
    lo = ijk.min(axis=0)
    span = ijk.max(axis=0) - lo + 1
    keys = ((ijk[:, 0] - lo[0]) * span[1] + (ijk[:, 1] - lo[1])) * span[2] + (ijk[:, 2] - lo[2])
    uniq, counts = np.unique(keys, return_counts=True)
    k = uniq // (span[1] * span[2])
    rem = uniq % (span[1] * span[2])
    coords = np.column_stack([k + lo[0], rem // span[2] + lo[1], rem % span[2] + lo[2]])
    return coords, counts


def density_stats(cloud: LabelledCloud, voxel_edge: float = DEFAULT_VOXEL_EDGE) -> DensityStats:
    """Mean and population stddev of ``count / edge**3`` over occupied voxels."""
    if not voxel_edge > 0:
        raise ConfigError("voxel_edge must be > 0")
    if len(cloud) == 0:
        raise EmptyCloud("density statistics need a non-empty cloud")
    _, counts = voxel_counts(cloud.xyz, voxel_edge)
    dens = counts / voxel_edge**3
    return DensityStats(float(voxel_edge), int(len(counts)), float(dens.mean()), float(dens.std()),
                        int(counts.sum()))


@dataclass(frozen=True)
class DensityProfile:
    axis: str
    coord: np.ndarray    # bin centres, normalised to [0, 1]
    mean: np.ndarray     # bin density normalised so the maximum is 1
    stddev: np.ndarray   # spread of voxel densities in the bin, same scale as ``mean``
    counts: np.ndarray
    max_coord: float

    @property
    def bins(self) -> List[Tuple[float, float, float]]:
        return list(zip(self.coord.tolist(), self.mean.tolist(), self.stddev.tolist()))

    def third_means(self) -> Tuple[float, float]:
        """Mean normalised density over the innermost and outermost thirds of the bins."""
        n = len(self.mean)
        k = max(1, n // 3)
        return float(self.mean[:k].mean()), float(self.mean[-k:].mean())

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("bin_coord,mean,stddev\n")
        for c, m, s in self.bins:
            out.write(f"{c:.6f},{m:.6f},{s:.6f}\n")
        return out.getvalue()


def _profile_coord(xyz: np.ndarray, axis: str) -> np.ndarray:
    if axis == "radial_xy":
        return np.hypot(xyz[:, 0], xyz[:, 1])
    if axis == "height":
        return xyz[:, 2]
    raise ConfigError(f"profile axis must be 'radial_xy' or 'height', got {axis!r}")


def density_profile(cloud: LabelledCloud, axis: str = "radial_xy", n_bins: int = 20,
                    voxel_edge: float = DEFAULT_VOXEL_EDGE) -> DensityProfile:
    """Density against XY distance from the origin or against height, both axes normalised.

    Bin density is the bin count over the bin volume: an annulus times the
    cloud's height extent (radial) or the XY bounding-box area times the slab
    thickness (height). The spread column is the population stddev of the
    occupied-voxel densities whose centres fall in the bin.
    """
    if n_bins < 2:
        raise ConfigError("n_bins must be >= 2")
    if len(cloud) == 0:
        raise EmptyCloud("density profile needs a non-empty cloud")
    xyz = cloud.xyz
    coord = _profile_coord(xyz, axis)
    top = float(coord.max())
    if top <= 0:
        top = 1.0
    edges = np.linspace(0.0, top, n_bins + 1)
    which = np.clip(np.searchsorted(edges, coord, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(which, minlength=n_bins)
    if axis == "radial_xy":
        z_extent = float(np.ptp(xyz[:, 2])) or 1.0
        vol = math.pi * (edges[1:] ** 2 - edges[:-1] ** 2) * z_extent
    else:
        area = float(np.ptp(xyz[:, 0]) * np.ptp(xyz[:, 1])) or 1.0
        vol = area * np.diff(edges)
    dens = counts / vol
    norm = dens.max()
    vox, vcounts = voxel_counts(xyz, voxel_edge)
    vcoord = _profile_coord((vox + 0.5) * voxel_edge, axis)
    vbin = np.clip(np.searchsorted(edges, vcoord, side="right") - 1, 0, n_bins - 1)
    vd = vcounts / voxel_edge**3
    n_v = np.bincount(vbin, minlength=n_bins)
    s1 = np.bincount(vbin, weights=vd, minlength=n_bins)
    s2 = np.bincount(vbin, weights=vd * vd, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(n_v > 0, s2 / n_v - (s1 / n_v) ** 2, 0.0)
    spread = np.sqrt(np.maximum(var, 0.0)) / norm
    centres = 0.5 * (edges[:-1] + edges[1:]) / top
    return DensityProfile(axis, centres, dens / norm, spread, counts, top)


@dataclass(frozen=True, eq=False)
class OcclusionMap:
    cloud: LabelledCloud
    visible: np.ndarray
    occluded_fraction: float
    match_radius: float

    def write(self, path, extra_meta: Optional[dict] = None) -> None:
        """CSV or PLY of the source cloud with a ``visible`` 0/1 column."""
        from pathlib import Path

        from simtreels.cloud.io import write_meta

        path = Path(path)
        c = self.cloud
        if path.suffix.lower() == ".ply":
            dtype = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("tree_id", "<u4"),
                              ("level", "u1"), ("visible", "u1")])
            rec = np.empty(len(c), dtype=dtype)
            rec["x"], rec["y"], rec["z"] = c.xyz[:, 0], c.xyz[:, 1], c.xyz[:, 2]
            rec["tree_id"], rec["level"], rec["visible"] = c.tree_id, c.level, self.visible
            header = ("ply\nformat binary_little_endian 1.0\n"
                      f"element vertex {len(c)}\n"
                      "property float x\nproperty float y\nproperty float z\n"
                      "property uint tree_id\nproperty uchar level\nproperty uchar visible\nend_header\n")
            with open(path, "wb") as fh:
                fh.write(header.encode("ascii"))
                fh.write(rec.tobytes())
        else:
            import pandas as pd

            pd.DataFrame({"x": c.xyz[:, 0], "y": c.xyz[:, 1], "z": c.xyz[:, 2],
                          "tree_id": c.tree_id.astype(np.int64), "level": c.level.astype(np.int64),
                          "visible": self.visible.astype(np.int64)}).to_csv(
                path, index=False, float_format="%.6f", lineterminator="\n")
        write_meta(path, {**c.metadata, "stage": "occlusion", "match_radius": self.match_radius,
                          "occluded_fraction": self.occluded_fraction, **(extra_meta or {})})


def occlusion_map(source: LabelledCloud, scan: LabelledCloud, match_radius: float,
                  workers: int = 1) -> OcclusionMap:
    """Flag each source point visible iff some scan point lies within ``match_radius``."""
    if not match_radius > 0:
        raise ConfigError("match_radius must be > 0")
    if len(source) == 0 or len(scan) == 0:
        raise EmptyCloud("occlusion map needs non-empty source and scan clouds")
    # cells no finer than 1e-5 of the extent keep grid keys in range for tiny radii
    cell = max(float(match_radius), float(np.ptp(scan.xyz, axis=0).max()) * 1e-5)
    index = build_index(scan, cell)
    visible = index.any_within_batch(source.xyz, match_radius, workers=workers)
    occluded = 1.0 - float(np.count_nonzero(visible)) / len(source)
    return OcclusionMap(source, visible, occluded, float(match_radius))


METRIC_ROWS = ("Number of points", "% of points occluded", "Average density (pts/m^3)", "Stddev density (pts/m^3)")


@dataclass
class StandRuns:
    """One stand's clouds for the report: source, control and named scans."""

    name: str
    source: LabelledCloud
    control: Optional[LabelledCloud] = None
    scans: Dict[str, LabelledCloud] = field(default_factory=dict)


@dataclass
class Report:
    voxel_edge: float
    match_radius: float
    columns: List[str]
    # stand name -> column -> (n_points, occluded_fraction, mean density, stddev density)
    blocks: Dict[str, Dict[str, Tuple[int, float, float, float]]]

    def cell(self, stand: str, column: str, metric: str):
        n, occ, mean, std = self.blocks[stand][column]
        return {METRIC_ROWS[0]: n, METRIC_ROWS[1]: occ, METRIC_ROWS[2]: mean, METRIC_ROWS[3]: std}[metric]

    @staticmethod
    def _fmt(metric: str, value) -> str:
        if value is None:
            return ""
        if metric == METRIC_ROWS[0]:
            return str(int(value))
        if metric == METRIC_ROWS[1]:
            return f"{100 * value:.2f}%"
        return f"{value:.1f}"

    def rows(self) -> List[List[str]]:
        out = []
        for stand, cols in self.blocks.items():
            for metric in METRIC_ROWS:
                row = [stand, metric]
                for c in self.columns:
                    row.append(self._fmt(metric, self.cell(stand, c, metric)) if c in cols else "")
                out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stand", "metric", *self.columns])
        w.writerows(self.rows())
        return buf.getvalue()

    def to_text(self) -> str:
        header = ["", *self.columns]
        lines = [f"voxel edge {self.voxel_edge} m, match radius {self.match_radius} m"]
        body = []
        for stand in self.blocks:
            body.append([stand] + [""] * len(self.columns))
            body.extend([[r[1], *r[2:]] for r in self.rows() if r[0] == stand])
        widths = [max(len(str(r[i])) for r in [header, *body]) for i in range(len(header))]
        fmt = "  ".join(["{:<%d}" % widths[0]] + ["{:>%d}" % w for w in widths[1:]])
        lines.append(fmt.format(*header))
        lines.extend(fmt.format(*r) for r in body)
        return "\n".join(lines) + "\n"


def summary_report(stands: Sequence[StandRuns], voxel_edge: float = DEFAULT_VOXEL_EDGE,
                   match_radius: float = 0.04, workers: int = 1) -> Report:
    """Point count, occluded %, mean/stddev voxel density per stand and per cloud (control first)."""
    columns: List[str] = []
    blocks: Dict[str, Dict[str, Tuple[int, float, float, float]]] = {}
    for st in stands:
        clouds: Dict[str, LabelledCloud] = {}
        if st.control is not None:
            clouds["Control"] = st.control
        clouds.update(st.scans)
        block = {}
        for col, cloud in clouds.items():
            if col not in columns:
                columns.append(col)
            ds = density_stats(cloud, voxel_edge)
            occ = occlusion_map(st.source, cloud, match_radius, workers).occluded_fraction
            block[col] = (len(cloud), occ, ds.mean_density, ds.stddev_density)
        blocks[st.name] = block
    return Report(float(voxel_edge), float(match_radius), columns, blocks)
