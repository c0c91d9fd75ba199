"""Pipeline configuration: one TOML file with a section per stage.

Schema (every section optional; missing ones fall back to the presets)::

    seed = 7                      # global seed: stand yaw/placement, scan noise, control draw
    output = "out/avocado"        # output directory
    format = "ply"                # cloud file format, "ply" or "csv"

    [trees.avocado]               # named definitions; preset/file plus field overrides,
    preset = "avocado"            # or a full inline definition with [[trees.NAME.level]]

    [stand]
    preset = "orchard-6x10"       # or kind = "orchard" | "forest" with all fields
    rows = 3                      # any OrchardLayout / ForestLayout field overrides the preset
    sample_spacing = 0.01         # optional override of every tree's sample spacing

    [sensors.plane-270]           # preset and/or explicit kind + parameters
    preset = "plane-270"

    [trajectories.handheld]
    preset = "handheld-loop"      # parameters of the trajectory builder may follow

    [[scan_runs]]                 # one scan per entry
    name = "handheld"
    sensor = "plane-270"
    trajectory = "handheld"

    [scan]
    search_radius = 0.02
    noise_sigma = 0.0
    dedupe = false

    [control]
    match = "handheld"            # scan run whose point count the control cloud copies

    [analysis]
    voxel_edge = 0.5
    match_radius = 0.04           # default 2 x search_radius
    n_bins = 20

Names used in ``[[scan_runs]]`` may refer to presets without declaring them.
"""

from __future__ import annotations

import copy
import inspect
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from simtreels.cloud.model import params_hash
from simtreels.errors import ConfigError, InputFileError
from simtreels.scanner import ScanParams
from simtreels.sensor import SensorShape, build_multi_plane, build_single_plane, build_spherical
from simtreels.stand import ForestLayout, OrchardLayout, StandLayout, layout_stand
from simtreels.trajectory import Trajectory, traj_aerial_grid, traj_ground_rows, traj_handheld_loop
from simtreels.treegen.definition import PRESETS as TREE_PRESETS
from simtreels.treegen.definition import TreeDefinition, definition_from_dict, load_definition

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


STAND_PRESETS: Dict[str, dict] = {
    "orchard-6x10": dict(kind="orchard", rows=5, trees_per_row=5, tree_spacing=6.0, row_spacing=10.0,
                         definition="avocado"),
    "forest-min6": dict(kind="forest", extent=[-15.0, -15.0, 15.0, 15.0], tree_count=10, min_spacing=6.0,
                        definition="aspen"),
}

SENSOR_PRESETS: Dict[str, dict] = {
    "plane-270": dict(kind="single_plane", fov_deg=270.0, angular_res_deg=0.675, max_range_m=15.0,
                      range_step_m=0.02),
    "puck-9beam": dict(kind="multi_plane", fov_deg=270.0, angular_res_deg=0.675, max_range_m=15.0,
                       range_step_m=0.02, n_planes=9, vertical_fov_deg=30.0),
}

# Pose steps follow a 40 Hz line rate at walking (0.5 m/s), driving (1 m/s)
# and drone (2 m/s) speeds. The drone flies low enough for the 15 m sensors
# above to reach the canopy.
TRAJECTORY_PRESETS: Dict[str, dict] = {
    "handheld-loop": dict(kind="handheld_loop", step=0.0125),
    "ground-rows": dict(kind="ground_rows", step=0.025),
    "aerial-grid": dict(kind="aerial_grid", altitude=16.0, line_spacing=5.0, step=0.05),
}

DEFAULT_RUNS = (
    dict(name="handheld", sensor="plane-270", trajectory="handheld-loop"),
    dict(name="ground", sensor="plane-270", trajectory="ground-rows"),
    dict(name="aerial", sensor="plane-270", trajectory="aerial-grid"),
)

_SENSOR_BUILDERS = {
    "single_plane": build_single_plane,
    "multi_plane": build_multi_plane,
    "spherical": build_spherical,
}
_TRAJ_BUILDERS = {
    "handheld_loop": traj_handheld_loop,
    "ground_rows": traj_ground_rows,
    "aerial_grid": traj_aerial_grid,
}


def _merge_preset(section: dict, presets: Dict[str, dict], what: str) -> dict:
    section = dict(section)
    name = section.pop("preset", None)
    if name is None:
        return section
    if name not in presets:
        raise ConfigError(f"unknown {what} preset {name!r}; presets: {sorted(presets)}")
    return {**copy.deepcopy(presets[name]), **section}


def _kwargs_for(fn, params: dict, where: str) -> dict:
    allowed = set(inspect.signature(fn).parameters)
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)} (allowed: {sorted(allowed)})")
    return params


@dataclass(frozen=True)
class SensorConfig:
    kind: str
    params: Tuple[Tuple[str, Any], ...]

    @classmethod
    def from_dict(cls, d: dict, where: str = "sensor") -> "SensorConfig":
        d = _merge_preset(d, SENSOR_PRESETS, "sensor")
        kind = d.pop("kind", None)
        if kind not in _SENSOR_BUILDERS:
            raise ConfigError(f"{where}: kind must be one of {sorted(_SENSOR_BUILDERS)}, got {kind!r}")
        _kwargs_for(_SENSOR_BUILDERS[kind], d, where)
        return cls(kind, tuple(sorted(d.items())))

    def build(self) -> SensorShape:
        try:
            return _SENSOR_BUILDERS[self.kind](**dict(self.params))
        except TypeError as exc:
            raise ConfigError(f"sensor {self.kind}: {exc}") from None

    def to_dict(self) -> dict:
        return {"kind": self.kind, **dict(self.params)}


@dataclass(frozen=True)
class TrajectoryConfig:
    kind: str
    params: Tuple[Tuple[str, Any], ...]

    @classmethod
    def from_dict(cls, d: dict, where: str = "trajectory") -> "TrajectoryConfig":
        d = _merge_preset(d, TRAJECTORY_PRESETS, "trajectory")
        kind = d.pop("kind", None)
        if kind not in _TRAJ_BUILDERS:
            raise ConfigError(f"{where}: kind must be one of {sorted(_TRAJ_BUILDERS)}, got {kind!r}")
        allowed = set(inspect.signature(_TRAJ_BUILDERS[kind]).parameters) - {"layout"}
        if kind == "aerial_grid":
            allowed.add("margin")
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"{where}: unknown keys {sorted(unknown)} (allowed: {sorted(allowed)})")
        return cls(kind, tuple(sorted((k, tuple(v) if isinstance(v, list) else v) for k, v in d.items())))

    def build(self, stand: "StandConfig") -> Trajectory:
        p = dict(self.params)
        if self.kind == "ground_rows":
            return traj_ground_rows(stand.layout, **p)
        if self.kind == "aerial_grid":
            margin = p.pop("margin", 3.0)
            if "extent" not in p:
                xy = np.array([pl.position[:2] for pl in layout_stand(stand.layout)])
                lo, hi = xy.min(axis=0) - margin, xy.max(axis=0) + margin
                p["extent"] = (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))
            return traj_aerial_grid(**p)
        return traj_handheld_loop(**p)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: list(v) if isinstance(v, tuple) else v for k, v in self.params}}


@dataclass(frozen=True)
class StandConfig:
    layout: StandLayout
    sample_spacing: Optional[float] = None

    @classmethod
    def from_dict(cls, d: dict, seed: Optional[int]) -> "StandConfig":
        d = _merge_preset(d, STAND_PRESETS, "stand")
        kind = d.pop("kind", None)
        spacing = d.pop("sample_spacing", None)
        if spacing is not None and not (isinstance(spacing, (int, float)) and spacing > 0):
            raise ConfigError(f"stand.sample_spacing must be > 0, got {spacing!r}")
        target = {"orchard": OrchardLayout, "forest": ForestLayout}.get(kind)
        if target is None:
            raise ConfigError(f"stand kind must be 'orchard' or 'forest', got {kind!r}")
        names = {f.name for f in fields(target)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"stand: unknown keys {sorted(unknown)} for a {kind} layout")
        if "seed" not in d and seed is not None:
            d["seed"] = seed
        if "extent" in d:
            ext = d["extent"]
            if len(ext) != 4:
                raise ConfigError("stand.extent must be [x_min, y_min, x_max, y_max]")
            d["extent"] = tuple(float(v) for v in ext)
        try:
            sub = target(**d)
        except TypeError as exc:
            raise ConfigError(f"stand: {exc}") from None
        layout = StandLayout(kind, orchard=sub if kind == "orchard" else None,
                             forest=sub if kind == "forest" else None)
        return cls(layout, None if spacing is None else float(spacing))

    @property
    def params(self):
        return self.layout.orchard if self.layout.kind == "orchard" else self.layout.forest

    def to_dict(self) -> dict:
        d = {"kind": self.layout.kind, **asdict(self.params)}
        if self.sample_spacing is not None:
            d["sample_spacing"] = self.sample_spacing
        return d


@dataclass(frozen=True)
class ScanRun:
    name: str
    sensor: str
    trajectory: str


@dataclass(frozen=True)
class AnalysisConfig:
    voxel_edge: float = 0.5
    match_radius: Optional[float] = None
    n_bins: int = 20

    def __post_init__(self):
        if not self.voxel_edge > 0:
            raise ConfigError("analysis.voxel_edge must be > 0")
        if self.match_radius is not None and not self.match_radius > 0:
            raise ConfigError("analysis.match_radius must be > 0")
        if not (isinstance(self.n_bins, int) and self.n_bins >= 2):
            raise ConfigError("analysis.n_bins must be an integer >= 2")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    output: str = "out"
    format: str = "ply"
    trees: Dict[str, TreeDefinition] = field(default_factory=dict)
    stand: StandConfig = None
    sensors: Dict[str, SensorConfig] = field(default_factory=dict)
    trajectories: Dict[str, TrajectoryConfig] = field(default_factory=dict)
    runs: Tuple[ScanRun, ...] = ()
    scan: ScanParams = field(default_factory=ScanParams)
    control_match: Optional[str] = None
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    @property
    def match_radius(self) -> float:
        return self.analysis.match_radius or 2.0 * self.scan.search_radius

    def sensor(self, name: str) -> SensorConfig:
        return self.sensors[name]

    def trajectory(self, name: str) -> TrajectoryConfig:
        return self.trajectories[name]

    def tree(self, name: str) -> TreeDefinition:
        return self.trees[name]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "output": self.output, "format": self.format,
            "trees": {k: v.to_dict() for k, v in sorted(self.trees.items())},
            "stand": self.stand.to_dict(),
            "sensors": {k: v.to_dict() for k, v in sorted(self.sensors.items())},
            "trajectories": {k: v.to_dict() for k, v in sorted(self.trajectories.items())},
            "scan_runs": [asdict(r) for r in self.runs],
            "scan": {k: v for k, v in asdict(self.scan).items() if k != "seed"},
            "control": {"match": self.control_match},
            "analysis": asdict(self.analysis),
        }

    @property
    def config_hash(self) -> str:
        return params_hash(self.to_dict())

    def with_overrides(self, **kw) -> "PipelineConfig":
        """Return a copy with top-level fields replaced (seed changes re-seed stand and scan)."""
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        if "seed" in kw and kw["seed"] is not None:
            seed = int(kw.pop("seed"))
            raw = self.stand.to_dict()
            if raw.get("seed") == self.seed:
                raw["seed"] = seed
            d["stand"] = StandConfig.from_dict(raw, seed)
            d["scan"] = ScanParams(**{**asdict(self.scan), "seed": seed})
            d["seed"] = seed
        d.update({k: v for k, v in kw.items() if v is not None})
        return PipelineConfig(**d)


def _tree_from_section(name: str, d: dict, base_dir: Path) -> TreeDefinition:
    d = dict(d)
    preset = d.pop("preset", None)
    path = d.pop("file", None)
    if preset is not None and path is not None:
        raise ConfigError(f"trees.{name}: give either preset or file, not both")
    if preset is not None:
        if preset not in TREE_PRESETS:
            raise ConfigError(f"trees.{name}: unknown preset {preset!r}; presets: {sorted(TREE_PRESETS)}")
        base = TREE_PRESETS[preset].to_dict()
    elif path is not None:
        p = Path(path)
        base = load_definition(p if p.is_absolute() else base_dir / p).to_dict()
    else:
        base = {}
    base.update(d)
    base["name"] = d.get("name", name)
    return definition_from_dict(base)


def config_from_dict(data: dict, base_dir: Path = Path(".")) -> PipelineConfig:
    data = dict(data)
    known = {"seed", "output", "format", "trees", "stand", "sensors", "trajectories", "scan_runs", "scan",
             "control", "analysis"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    fmt = data.get("format", "ply")
    if fmt not in ("ply", "csv"):
        raise ConfigError(f"format must be 'ply' or 'csv', got {fmt!r}")

    trees = {name: _tree_from_section(name, sec, base_dir) for name, sec in data.get("trees", {}).items()}
    stand = StandConfig.from_dict(data.get("stand", {"preset": "orchard-6x10"}), seed)
    ref = stand.params.definition
    if ref not in trees:
        if ref not in TREE_PRESETS:
            raise ConfigError(f"stand refers to unknown tree definition {ref!r}")
        trees[ref] = TREE_PRESETS[ref]

    runs_raw = data.get("scan_runs", list(DEFAULT_RUNS))
    sensors = {n: SensorConfig.from_dict(s, f"sensors.{n}") for n, s in data.get("sensors", {}).items()}
    trajs = {n: TrajectoryConfig.from_dict(t, f"trajectories.{n}") for n, t in data.get("trajectories", {}).items()}
    runs = []
    for i, r in enumerate(runs_raw):
        if set(r) != {"name", "sensor", "trajectory"}:
            raise ConfigError(f"scan_runs[{i}] needs exactly name, sensor and trajectory")
        if r["sensor"] not in sensors:
            if r["sensor"] not in SENSOR_PRESETS:
                raise ConfigError(f"scan_runs[{i}]: unknown sensor {r['sensor']!r}")
            sensors[r["sensor"]] = SensorConfig.from_dict({"preset": r["sensor"]})
        if r["trajectory"] not in trajs:
            if r["trajectory"] not in TRAJECTORY_PRESETS:
                raise ConfigError(f"scan_runs[{i}]: unknown trajectory {r['trajectory']!r}")
            trajs[r["trajectory"]] = TrajectoryConfig.from_dict({"preset": r["trajectory"]})
        runs.append(ScanRun(str(r["name"]), r["sensor"], r["trajectory"]))
    names = [r.name for r in runs]
    if len(set(names)) != len(names):
        raise ConfigError(f"scan run names must be unique, got {names}")

    scan_sec = dict(data.get("scan", {}))
    if "seed" in scan_sec:
        raise ConfigError("scan.seed is taken from the global seed")
    unknown = set(scan_sec) - {"search_radius", "noise_sigma", "dedupe"}
    if unknown:
        raise ConfigError(f"scan: unknown keys {sorted(unknown)}")
    scan = ScanParams(seed=seed, **scan_sec)

    control = data.get("control", {})
    if set(control) - {"match"}:
        raise ConfigError(f"control: unknown keys {sorted(set(control) - {'match'})}")
    match = control.get("match", names[0] if names else None)
    if match is not None and match not in names:
        raise ConfigError(f"control.match refers to unknown scan run {match!r}")

    an = dict(data.get("analysis", {}))
    unknown = set(an) - {f.name for f in fields(AnalysisConfig)}
    if unknown:
        raise ConfigError(f"analysis: unknown keys {sorted(unknown)}")
    return PipelineConfig(seed=seed, output=str(data.get("output", "out")), format=fmt, trees=trees, stand=stand,
                          sensors=sensors, trajectories=trajs, runs=tuple(runs), scan=scan,
                          control_match=match, analysis=AnalysisConfig(**an))


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise InputFileError(f"cannot read config {path}: no such file")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, path.parent)


def default_config() -> PipelineConfig:
    return config_from_dict({})
