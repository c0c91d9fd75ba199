"""Tree definitions: a compact recursive-branching parameter set and its TOML form.

Schema (one definition per file)::

    name = "avocado"
    levels = 4                 # stem levels including the trunk (1..4)
    trunk_height = 3.5         # m
    trunk_base_radius = 0.15   # m
    leaves_per_tip = 24
    leaf_radius = 0.05         # m
    sample_spacing = 0.01      # m

    [[level]]                  # level 0: trunk (uses taper and curvature only)
    taper = [0.3, 0.0]
    curvature = [8.0, 4.0]

    [[level]]                  # level 1 and deeper: one table per level
    child_count = [9, 2]       # children per parent stem, [mean, jitter]
    length_ratio = [0.55, 0.1] # of the parent length
    base_radius_ratio = [0.45, 0.05]
    taper = [0.35, 0.05]       # tip radius / base radius
    down_angle = [55, 15]      # degrees from the parent axis
    curvature = [25, 10]       # total bend along the stem, degrees
    start_fraction_range = [0.25, 0.95]

Each ``[mean, jitter]`` pair is drawn as ``mean + jitter * U(-1, 1)`` per
element and clamped into the valid range.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Tuple

from simtreels.errors import ConfigError, InputFileError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

Pair = Tuple[float, float]


@dataclass(frozen=True)
class LevelParams:
    child_count: Pair = (0.0, 0.0)
    length_ratio: Pair = (0.5, 0.0)
    base_radius_ratio: Pair = (0.5, 0.0)
    taper: Pair = (0.5, 0.0)
    down_angle: Pair = (45.0, 0.0)
    curvature: Pair = (0.0, 0.0)
    start_fraction_range: Pair = (0.2, 1.0)

    def validate(self, where: str) -> None:
        for name in ("child_count", "length_ratio", "base_radius_ratio", "taper", "down_angle", "curvature"):
            mean, jitter = getattr(self, name)
            if not (math.isfinite(mean) and math.isfinite(jitter)) or jitter < 0:
                raise ConfigError(f"{where}.{name}: need finite mean and jitter >= 0")
        if self.child_count[0] < 0:
            raise ConfigError(f"{where}.child_count must be >= 0")
        for name in ("length_ratio", "base_radius_ratio", "taper"):
            mean = getattr(self, name)[0]
            if not (0 < mean <= 1):
                raise ConfigError(f"{where}.{name} must lie in (0, 1], got {mean}")
        for name in ("down_angle", "curvature"):
            mean = getattr(self, name)[0]
            if not (0 <= mean < 180):
                raise ConfigError(f"{where}.{name} must lie in [0, 180), got {mean}")
        lo, hi = self.start_fraction_range
        if not (0 <= lo <= hi <= 1):
            raise ConfigError(f"{where}.start_fraction_range must satisfy 0 <= lo <= hi <= 1")


@dataclass(frozen=True)
class TreeDefinition:
    name: str = "tree"
    levels: int = 1
    level_params: Tuple[LevelParams, ...] = field(default_factory=lambda: (LevelParams(),))
    trunk_height: float = 3.0
    trunk_base_radius: float = 0.15
    leaves_per_tip: int = 0
    leaf_radius: float = 0.05
    sample_spacing: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "level_params", tuple(self.level_params))
        self.validate()

    def validate(self) -> None:
        if not (isinstance(self.levels, int) and 1 <= self.levels <= 4):
            raise ConfigError(f"levels must be an integer in 1..4, got {self.levels!r}")
        if len(self.level_params) != self.levels:
            raise ConfigError(f"expected {self.levels} [[level]] tables, got {len(self.level_params)}")
        for i, lp in enumerate(self.level_params):
            lp.validate(f"level[{i}]")
        for name in ("trunk_height", "trunk_base_radius", "leaf_radius", "sample_spacing"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be > 0, got {v!r}")
        if not (isinstance(self.leaves_per_tip, int) and self.leaves_per_tip >= 0):
            raise ConfigError(f"leaves_per_tip must be a non-negative integer, got {self.leaves_per_tip!r}")

    def with_spacing(self, spacing: float) -> "TreeDefinition":
        d = asdict(self)
        d["sample_spacing"] = float(spacing)
        return definition_from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level"] = [dict(lp) for lp in d.pop("level_params")]
        return d


def _pair(v, where: str) -> Pair:
    if isinstance(v, (int, float)):
        return (float(v), 0.0)
    try:
        a, b = v
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected [mean, jitter], got {v!r}") from None
    return (float(a), float(b))


def _level_from_dict(d: dict, where: str) -> LevelParams:
    known = set(LevelParams.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return LevelParams(**{k: _pair(v, f"{where}.{k}") for k, v in d.items()})


def definition_from_dict(d: dict) -> TreeDefinition:
    d = dict(d)
    levels_raw = d.pop("level", d.pop("level_params", None))
    if levels_raw is None:
        raise ConfigError("tree definition needs [[level]] tables")
    known = set(TreeDefinition.__dataclass_fields__) - {"level_params"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"tree definition: unknown keys {sorted(unknown)}")
    params = tuple(_level_from_dict(lv, f"level[{i}]") for i, lv in enumerate(levels_raw))
    try:
        return TreeDefinition(level_params=params, **d)
    except TypeError as exc:
        raise ConfigError(f"tree definition: {exc}") from None


def load_definition(path) -> TreeDefinition:
    path = Path(path)
    if not path.is_file():
        raise InputFileError(f"cannot read {path}: no such file")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return definition_from_dict(data)


def dump_definition(defn: TreeDefinition) -> str:
    """Serialise to the TOML schema above (round-trips through :func:`definition_from_dict`)."""
    def num(v):
        return repr(float(v)) if isinstance(v, float) else str(v)

    d = defn.to_dict()
    lines = [f'name = "{d["name"]}"']
    for key in ("levels", "trunk_height", "trunk_base_radius", "leaves_per_tip", "leaf_radius", "sample_spacing"):
        lines.append(f"{key} = {num(d[key])}")
    for lv in d["level"]:
        lines.append("")
        lines.append("[[level]]")
        for k, (a, b) in lv.items():
            lines.append(f"{k} = [{num(a)}, {num(b)}]")
    return "\n".join(lines) + "\n"


# Presets are shaped after qualitative descriptions only: a rounded,
# dense-foliage avocado; a much wider macadamia; an aspen with a tall clear
# trunk and foliage high in the canopy.
PRESETS = {
    "avocado": TreeDefinition(
        name="avocado", levels=4, trunk_height=3.5, trunk_base_radius=0.15,
        leaves_per_tip=30, leaf_radius=0.06, sample_spacing=0.01,
        level_params=(
            LevelParams(taper=(0.3, 0.0), curvature=(8.0, 4.0)),
            LevelParams(child_count=(9, 2), length_ratio=(0.55, 0.1), base_radius_ratio=(0.45, 0.05),
                        taper=(0.35, 0.05), down_angle=(55, 15), curvature=(25, 10),
                        start_fraction_range=(0.25, 0.95)),
            LevelParams(child_count=(5, 1), length_ratio=(0.5, 0.1), base_radius_ratio=(0.5, 0.05),
                        taper=(0.4, 0.05), down_angle=(45, 10), curvature=(20, 10),
                        start_fraction_range=(0.2, 1.0)),
            LevelParams(child_count=(4, 1), length_ratio=(0.45, 0.1), base_radius_ratio=(0.5, 0.05),
                        taper=(0.5, 0.05), down_angle=(40, 10), curvature=(10, 5),
                        start_fraction_range=(0.3, 1.0)),
        )),
    "macadamia": TreeDefinition(
        name="macadamia", levels=4, trunk_height=2.6, trunk_base_radius=0.16,
        leaves_per_tip=30, leaf_radius=0.06, sample_spacing=0.01,
        level_params=(
            LevelParams(taper=(0.3, 0.0), curvature=(6.0, 3.0)),
            LevelParams(child_count=(8, 2), length_ratio=(0.95, 0.05), base_radius_ratio=(0.45, 0.05),
                        taper=(0.3, 0.05), down_angle=(68, 10), curvature=(30, 10),
                        start_fraction_range=(0.3, 1.0)),
            LevelParams(child_count=(5, 1), length_ratio=(0.55, 0.1), base_radius_ratio=(0.5, 0.05),
                        taper=(0.4, 0.05), down_angle=(45, 10), curvature=(20, 10),
                        start_fraction_range=(0.2, 1.0)),
            LevelParams(child_count=(4, 1), length_ratio=(0.45, 0.1), base_radius_ratio=(0.5, 0.05),
                        taper=(0.5, 0.05), down_angle=(40, 10), curvature=(10, 5),
                        start_fraction_range=(0.3, 1.0)),
        )),
    "aspen": TreeDefinition(
        name="aspen", levels=4, trunk_height=9.0, trunk_base_radius=0.14,
        leaves_per_tip=24, leaf_radius=0.045, sample_spacing=0.01,
        level_params=(
            LevelParams(taper=(0.15, 0.0), curvature=(5.0, 3.0)),
            LevelParams(child_count=(14, 2), length_ratio=(0.22, 0.04), base_radius_ratio=(0.35, 0.05),
                        taper=(0.35, 0.05), down_angle=(50, 10), curvature=(20, 10),
                        start_fraction_range=(0.55, 0.98)),
            LevelParams(child_count=(5, 1), length_ratio=(0.55, 0.1), base_radius_ratio=(0.5, 0.05),
                        taper=(0.4, 0.05), down_angle=(45, 10), curvature=(15, 5),
                        start_fraction_range=(0.2, 1.0)),
            LevelParams(child_count=(4, 1), length_ratio=(0.5, 0.1), base_radius_ratio=(0.5, 0.05),
                        taper=(0.5, 0.05), down_angle=(40, 10), curvature=(10, 5),
                        start_fraction_range=(0.3, 1.0)),
        )),
}


def get_definition(name: str) -> TreeDefinition:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown tree definition {name!r}; presets: {sorted(PRESETS)}") from None
