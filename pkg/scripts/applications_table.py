"""Report over several stands, each with its own control and scan runs.

    python scripts/applications_table.py --rows 3 --trees-per-row 3
    python scripts/applications_table.py configs/avocado_orchard.cfg configs/aspen_forest.cfg

Orchard stands can be shrunk with --rows/--trees-per-row and forests with
--forest-trees. Runs a stand's config does not list show up as blank cells.
"""

import argparse
import dataclasses
import time
from pathlib import Path

from simtreels.analysis import StandRuns, summary_report
from simtreels.cloud import build_index
from simtreels.config import StandConfig, load_config
from simtreels.scanner import control_sample, scan_stand
from simtreels.stand import StandLayout, assemble_stand, layout_stand

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIGS = ["avocado_orchard.cfg", "macadamia_orchard.cfg", "aspen_forest.cfg"]


def shrink(stand: StandConfig, rows, per_row, forest_trees) -> StandConfig:
    lay = stand.layout
    if lay.kind == "orchard" and (rows or per_row):
        o = dataclasses.replace(lay.orchard, rows=rows or lay.orchard.rows,
                                trees_per_row=per_row or lay.orchard.trees_per_row)
        return dataclasses.replace(stand, layout=StandLayout("orchard", orchard=o))
    if lay.kind == "forest" and forest_trees:
        f = dataclasses.replace(lay.forest, tree_count=forest_trees)
        return dataclasses.replace(stand, layout=StandLayout("forest", forest=f))
    return stand


def stand_runs(path, args):
    cfg = load_config(path).with_overrides(seed=args.seed)
    cfg = cfg.with_overrides(stand=shrink(cfg.stand, args.rows, args.trees_per_row, args.forest_trees))
    t0 = time.perf_counter()
    stand = assemble_stand(layout_stand(cfg.stand.layout), cfg.trees, workers=args.workers,
                           sample_spacing=cfg.stand.sample_spacing)
    index = build_index(stand, cfg.scan.search_radius)
    scans = {}
    for r in cfg.runs:
        traj = cfg.trajectories[r.trajectory].build(cfg.stand)
        res = scan_stand(stand, cfg.sensors[r.sensor].build(), traj, cfg.scan, workers=args.workers, index=index)
        if res.total_returns:
            scans[r.name] = res.cloud
        print(f"  {r.name}: {len(traj)} poses, {res.total_returns:,} returns")
    del index
    match = cfg.control_match or next(iter(scans))
    control = control_sample(stand, len(scans[match]), cfg.seed)
    p = cfg.stand.params
    print(f"{Path(path).name}: {len(stand):,} points, control matched to {match} "
          f"({time.perf_counter() - t0:.0f} s)")
    return cfg, StandRuns(f"{p.definition} {cfg.stand.layout.kind}", stand, control, scans)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="*", default=[str(ROOT / "configs" / c) for c in DEFAULT_CONFIGS])
    ap.add_argument("--rows", type=int)
    ap.add_argument("--trees-per-row", type=int)
    ap.add_argument("--forest-trees", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--csv", help="also write the table here")
    args = ap.parse_args()

    stands, cfg = [], None
    for path in args.configs:
        cfg, st = stand_runs(path, args)
        stands.append(st)
    rep = summary_report(stands, cfg.analysis.voxel_edge, cfg.match_radius, workers=args.workers)
    print()
    print(rep.to_text())
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())


if __name__ == "__main__":
    main()
