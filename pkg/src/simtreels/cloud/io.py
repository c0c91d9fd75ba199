"""Cloud file formats.

CSV
    Header ``x,y,z,tree_id,level,scanline_id,pose_index``; the last two
    columns are empty for source clouds. Coordinates are written with six
    decimals (1 micrometre), UTF-8, LF line endings.

PLY
    ``binary_little_endian`` with ``vertex`` properties ``x y z`` (float32),
    ``tree_id`` (uint32), ``level`` (uchar) and, for scans, ``scanline_id``
    and ``pose_index`` (uint32). Float32 storage keeps about 7 significant
    digits, i.e. a few micrometres at stand scale.

Every writer also emits ``<file>.meta.json`` with the cloud metadata
(provenance, seeds, parameter hashes), serialised with sorted keys so that
identical inputs give byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from simtreels.cloud.model import LabelledCloud
from simtreels.errors import ConfigError, InputFileError

CSV_COLUMNS = ["x", "y", "z", "tree_id", "level", "scanline_id", "pose_index"]

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}

PathLike = Union[str, Path]


def meta_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_meta(path: PathLike, metadata: dict) -> None:
    with open(meta_path(path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(metadata, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def read_meta(path: PathLike) -> dict:
    mp = meta_path(path)
    if not mp.exists():
        return {}
    with open(mp, encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(cloud: LabelledCloud, path: PathLike) -> None:
    n = len(cloud)
    frame = pd.DataFrame({
        "x": cloud.xyz[:, 0], "y": cloud.xyz[:, 1], "z": cloud.xyz[:, 2],
        "tree_id": cloud.tree_id.astype(np.int64), "level": cloud.level.astype(np.int64),
    })
    if cloud.is_scan:
        frame["scanline_id"] = cloud.scanline_id.astype(np.int64)
        frame["pose_index"] = cloud.pose_index.astype(np.int64)
    else:
        frame["scanline_id"] = pd.array([pd.NA] * n, dtype="Int64")
        frame["pose_index"] = pd.array([pd.NA] * n, dtype="Int64")
    frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n", encoding="utf-8", na_rep="")
    write_meta(path, cloud.metadata)


def read_csv(path: PathLike) -> LabelledCloud:
    path = Path(path)
    _require_file(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
    if header.split(",") != CSV_COLUMNS:
        raise ConfigError(f"{path}: unexpected CSV header {header!r}")
    frame = pd.read_csv(path, dtype={"x": np.float64, "y": np.float64, "z": np.float64,
                                     "tree_id": np.int64, "level": np.int64,
                                     "scanline_id": "Int64", "pose_index": "Int64"})
    sid = frame["scanline_id"]
    pid = frame["pose_index"]
    meta = read_meta(path)
    xyz = frame[["x", "y", "z"]].to_numpy(dtype=np.float64)
    if len(frame) and sid.notna().all() and pid.notna().all():
        return LabelledCloud(xyz, frame["tree_id"].to_numpy(), frame["level"].to_numpy(),
                             scanline_id=sid.to_numpy(dtype=np.int64), pose_index=pid.to_numpy(dtype=np.int64),
                             metadata=meta)
    if sid.notna().any() or pid.notna().any():
        raise ConfigError(f"{path}: scanline_id/pose_index must be all present or all empty")
    return LabelledCloud(xyz, frame["tree_id"].to_numpy(), frame["level"].to_numpy(), metadata=meta)


def _ply_dtype(scan: bool) -> np.dtype:
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("tree_id", "<u4"), ("level", "u1")]
    if scan:
        fields += [("scanline_id", "<u4"), ("pose_index", "<u4")]
    return np.dtype(fields)


def write_ply(cloud: LabelledCloud, path: PathLike) -> None:
    dtype = _ply_dtype(cloud.is_scan)
    rec = np.empty(len(cloud), dtype=dtype)
    rec["x"], rec["y"], rec["z"] = cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]
    rec["tree_id"] = cloud.tree_id
    rec["level"] = cloud.level
    props = ["property float x", "property float y", "property float z",
             "property uint tree_id", "property uchar level"]
    if cloud.is_scan:
        rec["scanline_id"] = cloud.scanline_id
        rec["pose_index"] = cloud.pose_index
        props += ["property uint scanline_id", "property uint pose_index"]
    header = "\n".join(["ply", "format binary_little_endian 1.0",
                        f"element vertex {len(cloud)}", *props, "end_header"]) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())
    write_meta(path, cloud.metadata)


def read_ply(path: PathLike) -> LabelledCloud:
    path = Path(path)
    _require_file(path)
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ConfigError(f"{path}: not a PLY file")
        fmt = None
        n_vertex = None
        props = []
        current = None
        while True:
            line = fh.readline()
            if not line:
                raise ConfigError(f"{path}: truncated PLY header")
            parts = line.decode("ascii").split()
            if not parts or parts[0] in ("comment", "obj_info"):
                continue
            if parts[0] == "end_header":
                break
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                current = parts[1]
                if current == "vertex":
                    n_vertex = int(parts[2])
            elif parts[0] == "property" and current == "vertex":
                if parts[1] == "list":
                    raise ConfigError(f"{path}: list properties on vertices are not supported")
                props.append((parts[2], _PLY_TYPES[parts[1]]))
        if n_vertex is None:
            raise ConfigError(f"{path}: no vertex element")
        if fmt == "binary_little_endian":
            dtype = np.dtype([(name, "<" + t) for name, t in props])
            rec = np.frombuffer(fh.read(dtype.itemsize * n_vertex), dtype=dtype, count=n_vertex)
        elif fmt == "ascii":
            table = np.loadtxt(fh, ndmin=2, max_rows=n_vertex)
            rec = {name: table[:, i] for i, (name, _) in enumerate(props)}
        else:
            raise ConfigError(f"{path}: unsupported PLY format {fmt!r}")
    names = [name for name, _ in props]
    for required in ("x", "y", "z", "tree_id", "level"):
        if required not in names:
            raise ConfigError(f"{path}: missing vertex property {required!r}")
    xyz = np.column_stack([np.asarray(rec[k], dtype=np.float64) for k in ("x", "y", "z")]).reshape(-1, 3)
    extra = {}
    if "scanline_id" in names and "pose_index" in names:
        extra = dict(scanline_id=np.asarray(rec["scanline_id"]), pose_index=np.asarray(rec["pose_index"]))
    return LabelledCloud(xyz, np.asarray(rec["tree_id"]), np.asarray(rec["level"]),
                         metadata=read_meta(path), **extra)


def _require_file(path: Path) -> None:
    if not path.is_file():
        raise InputFileError(f"cannot read {path}: no such file")


def write_cloud(cloud: LabelledCloud, path: PathLike) -> None:
    """Write by extension: ``.csv`` or ``.ply``."""
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        write_csv(cloud, path)
    elif suffix == ".ply":
        write_ply(cloud, path)
    else:
        raise ConfigError(f"unknown cloud file extension {suffix!r} (use .csv or .ply)")


def read_cloud(path: PathLike) -> LabelledCloud:
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return read_csv(path)
    if suffix == ".ply":
        return read_ply(path)
    raise ConfigError(f"unknown cloud file extension {suffix!r} (use .csv or .ply)")
