"""Orchard and forest layouts, and assembly of the combined stand cloud."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from simtreels import rng as rngmod
from simtreels.cloud.model import LabelledCloud, concatenate, params_hash
from simtreels.errors import ConfigError, InputFileError, PlacementFailure
from simtreels.rotations import rot_z
from simtreels.treegen import TreeDefinition, generate_tree


@dataclass(frozen=True)
class OrchardLayout:
    rows: int = 5
    trees_per_row: int = 5
    tree_spacing: float = 6.0
    row_spacing: float = 10.0
    row_azimuth: float = 0.0   # degrees clockwise from north (+Y)
    seed: int = 0              # drives per-tree yaw
    definition: str = "avocado"
    first_tree_seed: int = 1

    def validate(self) -> None:
        if self.rows < 1 or self.trees_per_row < 1:
            raise ConfigError("orchard rows and trees_per_row must be >= 1")
        if not (self.tree_spacing > 0 and self.row_spacing > 0):
            raise ConfigError("orchard spacings must be > 0")


@dataclass(frozen=True)
class ForestLayout:
    extent: Tuple[float, float, float, float] = (-15.0, -15.0, 15.0, 15.0)  # x_min, y_min, x_max, y_max
    tree_count: int = 10
    min_spacing: float = 6.0
    seed: Optional[int] = 0    # None draws a fresh seed (recorded in the placements)
    definition: str = "aspen"
    first_tree_seed: int = 1
    max_attempts: Optional[int] = None

    def validate(self) -> None:
        x0, y0, x1, y1 = self.extent
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("forest extent must have positive width and depth")
        if self.tree_count < 1:
            raise ConfigError("forest tree_count must be >= 1")
        if not self.min_spacing > 0:
            raise ConfigError("forest min_spacing must be > 0")


@dataclass(frozen=True)
class StandLayout:
    kind: str
    orchard: Optional[OrchardLayout] = None
    forest: Optional[ForestLayout] = None

    def __post_init__(self):
        if self.kind == "orchard":
            if self.orchard is None:
                raise ConfigError("orchard stand needs orchard parameters")
            self.orchard.validate()
        elif self.kind == "forest":
            if self.forest is None:
                raise ConfigError("forest stand needs forest parameters")
            self.forest.validate()
        else:
            raise ConfigError(f"stand kind must be 'orchard' or 'forest', got {self.kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TreePlacement:
    position: Tuple[float, float, float]
    yaw: float            # degrees
    tree_seed: int
    definition_ref: str


def orchard_frame(p: OrchardLayout) -> Tuple[Callable[[np.ndarray], np.ndarray], float, np.ndarray]:
    """Map from the un-rotated row frame (rows along +Y at x = k * row_spacing) to world XY.

    Returns ``(to_world, row_length, centre)``; ``to_world`` centres on the grid
    middle and applies the row azimuth (clockwise, so 90 degrees turns +Y into +X).
    """
    centre = np.array([(p.rows - 1) * p.row_spacing / 2.0, (p.trees_per_row - 1) * p.tree_spacing / 2.0])
    a = math.radians(p.row_azimuth)
    rot = np.array([[math.cos(a), math.sin(a)], [-math.sin(a), math.cos(a)]])

    def to_world(xy: np.ndarray) -> np.ndarray:
        return rot @ (np.asarray(xy, dtype=np.float64) - centre)

    return to_world, (p.trees_per_row - 1) * p.tree_spacing, centre


def orchard_grid(p: OrchardLayout) -> np.ndarray:
    """Un-centred, un-rotated trunk positions, row-major: ``(rows * trees_per_row, 2)``."""
    k, j = np.meshgrid(np.arange(p.rows), np.arange(p.trees_per_row), indexing="ij")
    return np.column_stack([k.ravel() * p.row_spacing, j.ravel() * p.tree_spacing])


def _yaws(seed: int, n: int) -> np.ndarray:
    return rngmod.stream(seed, rngmod.YAW).uniform(0.0, 360.0, size=n)


def layout_orchard(params: OrchardLayout) -> List[TreePlacement]:
    params.validate()
    grid = orchard_grid(params)
    to_world, _, _ = orchard_frame(params)
    yaws = _yaws(params.seed, len(grid))
    out = []
    for i, (xy, yaw) in enumerate(zip(grid, yaws)):
        w = to_world(xy)
        out.append(TreePlacement((float(w[0]), float(w[1]), 0.0), float(yaw), params.first_tree_seed + i,
                                 params.definition))
    return out


def layout_forest(params: ForestLayout) -> List[TreePlacement]:
    """Dart throwing in the extent with a minimum pairwise XY distance."""
    params.validate()
    seed = rngmod.fresh_seed() if params.seed is None else int(params.seed)
    g = rngmod.stream(seed)
    x0, y0, x1, y1 = params.extent
    n = params.tree_count
    max_attempts = params.max_attempts or 10_000 * n
    placed = np.empty((0, 2))
    attempts = 0
    min2 = params.min_spacing ** 2
    while len(placed) < n:
        if attempts >= max_attempts:
            raise PlacementFailure(f"placed {len(placed)} of {n} trees after {attempts} attempts "
                                   f"(extent {params.extent}, min spacing {params.min_spacing} m)")
        attempts += 1
        cand = np.array([g.uniform(x0, x1), g.uniform(y0, y1)])
        if len(placed) == 0 or (((placed - cand) ** 2).sum(axis=1) >= min2).all():
            placed = np.vstack([placed, cand])
    yaws = _yaws(seed, n)
    return [TreePlacement((float(x), float(y), 0.0), float(yaw), params.first_tree_seed + i, params.definition)
            for i, ((x, y), yaw) in enumerate(zip(placed, yaws))]


def layout_stand(layout: StandLayout) -> List[TreePlacement]:
    if layout.kind == "orchard":
        return layout_orchard(layout.orchard)
    return layout_forest(layout.forest)


def _place_tree(p: TreePlacement, defn: TreeDefinition) -> LabelledCloud:
    tree = generate_tree(defn, p.tree_seed)
    if p.yaw == 0.0 and p.position == (0.0, 0.0, 0.0):
        return tree
    return tree.transformed(rot_z(math.radians(p.yaw)), p.position)


def assemble_stand(placements: Sequence[TreePlacement], definitions: Mapping[str, TreeDefinition],
                   workers: int = 1, sample_spacing: Optional[float] = None) -> LabelledCloud:
    """Union of per-tree clouds, yawed about each trunk and moved into place, in placement order."""
    placements = list(placements)
    seeds = [p.tree_seed for p in placements]
    if len(set(seeds)) != len(seeds):
        raise ConfigError("tree seeds must be unique within a stand")
    defs: Dict[str, TreeDefinition] = {}
    for p in placements:
        if p.definition_ref not in definitions:
            raise ConfigError(f"placement refers to unknown tree definition {p.definition_ref!r}")
        d = definitions[p.definition_ref]
        defs[p.definition_ref] = d.with_spacing(sample_spacing) if sample_spacing else d
    jobs = [(p, defs[p.definition_ref]) for p in placements]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(lambda job: _place_tree(*job), jobs))
    else:
        trees = [_place_tree(*job) for job in jobs]
    meta = {"stage": "stand", "n_trees": len(placements),
            "tree_seeds": seeds,
            "params_hash": params_hash({"placements": [asdict(p) for p in placements],
                                        "definitions": {k: v.to_dict() for k, v in sorted(defs.items())}})}
    return concatenate(trees, metadata=meta)


PLACEMENT_COLUMNS = ["x", "y", "yaw_deg", "tree_seed", "definition"]


def write_placements_csv(placements: Sequence[TreePlacement], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(PLACEMENT_COLUMNS) + "\n")
        for p in placements:
            fh.write(f"{p.position[0]!r},{p.position[1]!r},{p.yaw!r},{p.tree_seed},{p.definition_ref}\n")


def read_placements_csv(path) -> List[TreePlacement]:
    path = Path(path)
    if not path.is_file():
        raise InputFileError(f"cannot read {path}: no such file")
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header.split(",") != PLACEMENT_COLUMNS:
            raise ConfigError(f"{path}: unexpected placements header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            x, y, yaw, seed, name = line.rstrip("\n").split(",", 4)
            out.append(TreePlacement((float(x), float(y), 0.0), float(yaw), int(seed), name))
    return out
