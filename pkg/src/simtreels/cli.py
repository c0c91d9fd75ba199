"""Command-line front end.

    simtreels <subcommand> [--config FILE] [--seed N] [--workers N] [--out DIR] [stage flags]

Errors are reported on stderr as a single ``simtreels: error[<Kind>]: <message>``
line, and the exit status identifies the kind (see :mod:`simtreels.errors`;
usage errors exit with 2).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Dict, List, Optional

from simtreels import __version__
from simtreels.analysis import StandRuns, density_profile, density_stats, occlusion_map, summary_report
from simtreels.cloud.index import build_index, default_workers
from simtreels.cloud.io import read_cloud, write_cloud, write_meta
from simtreels.cloud.model import LabelledCloud
from simtreels.config import (
    SENSOR_PRESETS, PipelineConfig, SensorConfig, TrajectoryConfig, default_config, load_config,
)
from simtreels.errors import ConfigError, SimTreeError
from simtreels.scanner import ScanParams, control_sample, scan_stand, write_scan_stats
from simtreels.stand import assemble_stand, layout_stand, write_placements_csv
from simtreels.trajectory import read_trajectory_csv, write_trajectory_csv
from simtreels.treegen import generate_tree, get_definition, load_definition, load_obj, sample_mesh

log = logging.getLogger("simtreels")

USAGE_EXIT = 2
OUTPUT_EXIT = 8


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"simtreels: error[UsageError]: {message}", file=sys.stderr)
        self.exit(USAGE_EXIT)


# ---------------------------------------------------------------- helpers

class Run:
    """Resolved config plus output location and provenance for one invocation."""

    def __init__(self, args):
        cfg = load_config(args.config) if args.config else default_config()
        self.cfg: PipelineConfig = cfg.with_overrides(seed=args.seed)
        self.out = Path(args.out if args.out is not None else self.cfg.output)
        self.workers = default_workers() if args.workers is None else args.workers
        if self.workers < 1:
            raise ConfigError(f"--workers (or SIMTREELS_WORKERS) must be >= 1, got {self.workers}")
        self.fmt = getattr(args, "format", None) or self.cfg.format

    @property
    def provenance(self) -> dict:
        return {"config_hash": self.cfg.config_hash, "seed": self.cfg.seed, "simtreels_version": __version__}

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def cloud_path(self, stem: str) -> Path:
        return self.path(f"{stem}.{self.fmt}")

    def save_cloud(self, cloud: LabelledCloud, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_cloud(cloud.with_metadata(**self.provenance), path)
        log.info("wrote %s (%d points)", path, len(cloud))
        return path

    def save_occlusion(self, occ, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        occ.write(path, self.provenance)
        log.info("wrote %s (%.2f%% occluded)", path, 100 * occ.occluded_fraction)
        return path

    def save_text(self, text: str, path: Path, meta: Optional[dict] = None) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        write_meta(path, {**(meta or {}), **self.provenance})
        log.info("wrote %s", path)
        return path

    def save_json(self, data: dict, path: Path) -> Path:
        return self.save_text(json.dumps({**data, **self.provenance}, sort_keys=True, indent=1) + "\n", path)


def _stand_cloud(run: Run):
    st = run.cfg.stand
    placements = layout_stand(st.layout)
    cloud = assemble_stand(placements, run.cfg.trees, workers=run.workers, sample_spacing=st.sample_spacing)
    return placements, cloud


def _sensor_config(run: Run, name: str) -> SensorConfig:
    if name in run.cfg.sensors:
        return run.cfg.sensors[name]
    if name in SENSOR_PRESETS:
        return SensorConfig.from_dict({"preset": name})
    raise ConfigError(f"unknown sensor {name!r}; known: {sorted(set(run.cfg.sensors) | set(SENSOR_PRESETS))}")


def _trajectory(run: Run, name: str, step: Optional[float] = None):
    if name in run.cfg.trajectories:
        tc = run.cfg.trajectories[name]
    else:
        try:
            tc = TrajectoryConfig.from_dict({"preset": name})
        except ConfigError:
            raise ConfigError(f"unknown trajectory {name!r}") from None
    if step is not None:
        tc = TrajectoryConfig(tc.kind, tuple(sorted({**dict(tc.params), "step": step}.items())))
    return tc.build(run.cfg.stand)


def _scan_params(run: Run, args) -> ScanParams:
    base = run.cfg.scan
    return ScanParams(
        search_radius=base.search_radius if args.search_radius is None else args.search_radius,
        noise_sigma=base.noise_sigma if args.noise is None else args.noise,
        seed=run.cfg.seed,
        dedupe=base.dedupe or args.dedupe,
    )


# ---------------------------------------------------------------- subcommands

def cmd_tree(args) -> int:
    run = Run(args)
    if args.obj:
        spacing = args.spacing or run.cfg.scan.search_radius / 2.0
        mesh = load_obj(args.obj, tree_id=args.tree_seed)
        cloud = sample_mesh(mesh, spacing, args.tree_seed)
        stem = f"tree_{Path(args.obj).stem}_{args.tree_seed}"
    else:
        name = args.definition or run.cfg.stand.params.definition
        if name.endswith(".toml") or Path(name).is_file():
            defn = load_definition(name)
        elif name in run.cfg.trees:
            defn = run.cfg.trees[name]
        else:
            defn = get_definition(name)
        if args.spacing:
            defn = defn.with_spacing(args.spacing)
        cloud = generate_tree(defn, args.tree_seed)
        stem = f"tree_{defn.name}_{args.tree_seed}"
    run.save_cloud(cloud, run.cloud_path(stem))
    return 0


def cmd_stand(args) -> int:
    run = Run(args)
    placements, cloud = _stand_cloud(run)
    pl_path = run.path("placements.csv")
    write_placements_csv(placements, pl_path)
    write_meta(pl_path, {"stage": "placements", "stand": run.cfg.stand.to_dict(), **run.provenance})
    run.save_cloud(cloud, run.cloud_path("stand"))
    return 0


def cmd_sensor(args) -> int:
    run = Run(args)
    explicit = [args.fov, args.res, args.range, args.step]
    if any(v is not None for v in explicit):
        if any(v is None for v in explicit):
            raise ConfigError("--fov, --res, --range and --step must be given together")
        d = dict(kind="single_plane", fov_deg=args.fov, angular_res_deg=args.res, max_range_m=args.range,
                 range_step_m=args.step)
        if args.planes:
            d.update(kind="multi_plane", n_planes=args.planes, vertical_fov_deg=args.vfov)
        sc = SensorConfig.from_dict(d)
        name = "custom"
    else:
        name = args.preset or "plane-270"
        sc = _sensor_config(run, name)
    shape = sc.build()
    path = Path(args.export) if args.export else run.path(f"sensor_{name}.csv")
    cloud = shape.as_cloud().with_metadata(stage="sensor", sensor=sc.to_dict())
    run.save_cloud(cloud, path)
    print(f"{shape.n_lines} scan lines x {shape.n_samples} samples = {shape.n_points} points")
    return 0


def cmd_trajectory(args) -> int:
    run = Run(args)
    traj = _trajectory(run, args.name, args.step)
    path = Path(args.export) if args.export else run.path(f"trajectory_{args.name}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, path)
    write_meta(path, {"stage": "trajectory", "trajectory": traj.meta, **run.provenance})
    print(f"{len(traj)} poses")
    return 0


def cmd_scan(args) -> int:
    run = Run(args)
    stand = read_cloud(args.stand)
    shape = _sensor_config(run, args.sensor).build()
    if args.trajectory_file:
        traj = read_trajectory_csv(args.trajectory_file)
    else:
        traj = _trajectory(run, args.trajectory)
    params = _scan_params(run, args)
    result = scan_stand(stand, shape, traj, params, workers=run.workers)
    name = args.name or f"{args.sensor}_{args.trajectory or Path(args.trajectory_file).stem}"
    path = run.cloud_path(f"scan_{name}")
    run.save_cloud(result.cloud, path)
    result.extra.update(run.provenance)
    write_scan_stats(result, run.path(f"scan_{name}.stats.json"))
    print(f"{result.total_returns} returns from {len(traj)} poses")
    return 0


def cmd_control(args) -> int:
    run = Run(args)
    stand = read_cloud(args.stand)
    if (args.count is None) == (args.match is None):
        raise ConfigError("give exactly one of --count or --match")
    count = args.count if args.count is not None else len(read_cloud(args.match))
    cloud = control_sample(stand, count, run.cfg.seed)
    run.save_cloud(cloud, run.cloud_path(args.name))
    return 0


def cmd_analyze_density(args) -> int:
    run = Run(args)
    edge = args.voxel_edge or run.cfg.analysis.voxel_edge
    ds = density_stats(read_cloud(args.cloud), edge)
    data = {"cloud": str(args.cloud), "voxel_edge": ds.voxel_edge, "occupied_voxels": ds.occupied_voxels,
            "mean_density": ds.mean_density, "stddev_density": ds.stddev_density, "total_points": ds.total_points}
    run.save_json(data, run.path(f"density_{Path(args.cloud).stem}.json"))
    print(f"mean {ds.mean_density:.1f} pts/m^3, stddev {ds.stddev_density:.1f} pts/m^3, "
          f"{ds.occupied_voxels} occupied voxels of {ds.voxel_edge} m")
    return 0


def cmd_analyze_profile(args) -> int:
    run = Run(args)
    bins = args.bins or run.cfg.analysis.n_bins
    edge = args.voxel_edge or run.cfg.analysis.voxel_edge
    prof = density_profile(read_cloud(args.cloud), args.axis, bins, edge)
    run.save_text(prof.to_csv(), run.path(f"profile_{Path(args.cloud).stem}_{args.axis}.csv"),
                  {"stage": "profile", "axis": args.axis, "n_bins": bins, "max_coord": prof.max_coord})
    inner, outer = prof.third_means()
    print(f"inner-third mean {inner:.3f}, outer-third mean {outer:.3f}")
    return 0


def cmd_analyze_occlusion(args) -> int:
    run = Run(args)
    radius = args.radius or run.cfg.match_radius
    occ = occlusion_map(read_cloud(args.source), read_cloud(args.scan), radius, workers=run.workers)
    path = run.cloud_path(f"occlusion_{Path(args.scan).stem}")
    run.save_occlusion(occ, path)
    print(f"occluded {100 * occ.occluded_fraction:.2f}% (match radius {radius} m)")
    return 0


def _parse_named(items: List[str]) -> Dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--scan expects NAME=FILE, got {item!r}")
        k, v = item.split("=", 1)
        out[k] = v
    return out


def cmd_report(args) -> int:
    run = Run(args)
    scans = {k: read_cloud(v) for k, v in _parse_named(args.scan).items()}
    control = read_cloud(args.control) if args.control else None
    st = StandRuns(args.stand_name, read_cloud(args.source), control, scans)
    rep = summary_report([st], args.voxel_edge or run.cfg.analysis.voxel_edge,
                         args.radius or run.cfg.match_radius, workers=run.workers)
    meta = {"stage": "report", "voxel_edge": rep.voxel_edge, "match_radius": rep.match_radius}
    run.save_text(rep.to_csv(), run.path("report.csv"), meta)
    run.save_text(rep.to_text(), run.path("report.txt"), meta)
    sys.stdout.write(rep.to_text())
    return 0


def cmd_pipeline(args) -> int:
    run = Run(args)
    cfg = run.cfg
    run.save_json(cfg.to_dict(), run.path("config.resolved.json"))

    placements, stand = _stand_cloud(run)
    pl_path = run.path("placements.csv")
    write_placements_csv(placements, pl_path)
    write_meta(pl_path, {"stage": "placements", "stand": cfg.stand.to_dict(), **run.provenance})
    run.save_cloud(stand, run.cloud_path("stand"))

    index = build_index(stand, cfg.scan.search_radius)
    scans: Dict[str, LabelledCloud] = {}
    for r in cfg.runs:
        shape = cfg.sensors[r.sensor].build()
        traj = cfg.trajectories[r.trajectory].build(cfg.stand)
        tpath = run.path(f"trajectory_{r.name}.csv")
        write_trajectory_csv(traj, tpath)
        write_meta(tpath, {"stage": "trajectory", "trajectory": traj.meta, **run.provenance})
        log.info("scan %s: %s sensor, %d poses", r.name, r.sensor, len(traj))
        result = scan_stand(stand, shape, traj, cfg.scan, workers=run.workers, index=index)
        run.save_cloud(result.cloud.with_metadata(run=r.name), run.cloud_path(f"scan_{r.name}"))
        result.extra.update(run.provenance, run=r.name)
        write_scan_stats(result, run.path(f"scan_{r.name}.stats.json"))
        scans[r.name] = result.cloud
    del index

    control = None
    if cfg.control_match is not None and len(scans[cfg.control_match]):
        control = control_sample(stand, len(scans[cfg.control_match]), cfg.seed)
        run.save_cloud(control, run.cloud_path("control"))

    an = cfg.analysis
    for name, cloud in [("control", control), *scans.items()]:
        if cloud is None or len(cloud) == 0:
            continue
        for axis in ("radial_xy", "height"):
            prof = density_profile(cloud, axis, an.n_bins, an.voxel_edge)
            run.save_text(prof.to_csv(), run.path(f"profile_{name}_{axis}.csv"),
                          {"stage": "profile", "cloud": name, "axis": axis, "n_bins": an.n_bins})
        occ = occlusion_map(stand, cloud, cfg.match_radius, workers=run.workers)
        run.save_occlusion(occ, run.cloud_path(f"occlusion_{name}"))

    p = cfg.stand.params
    stand_name = f"{p.definition} {cfg.stand.layout.kind}"
    rep = summary_report([StandRuns(stand_name, stand, control, {k: v for k, v in scans.items() if len(v)})],
                         an.voxel_edge, cfg.match_radius, workers=run.workers)
    meta = {"stage": "report", "voxel_edge": rep.voxel_edge, "match_radius": rep.match_radius}
    run.save_text(rep.to_csv(), run.path("report.csv"), meta)
    run.save_text(rep.to_text(), run.path("report.txt"), meta)
    sys.stdout.write(rep.to_text())
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config file (TOML)")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--workers", type=int,
                        help="worker threads (default: $SIMTREELS_WORKERS or 1); never changes outputs")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--format", choices=("ply", "csv"), help="cloud file format")
    common.add_argument("-q", "--quiet", action="store_true", help="only print errors and results")

    p = _Parser(prog="simtreels", description="Simulated LiDAR scans of procedurally generated tree stands.")
    p.add_argument("--version", action="version", version=f"simtreels {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("tree", parents=[common], help="generate one tree cloud")
    s.add_argument("--definition", help="preset name, config tree name or definition file")
    s.add_argument("--tree-seed", type=int, default=1)
    s.add_argument("--spacing", type=float, help="surface sample spacing in metres")
    s.add_argument("--obj", help="sample an OBJ mesh instead of generating a tree")
    s.set_defaults(func=cmd_tree)

    s = sub.add_parser("stand", parents=[common], help="lay out and assemble the stand cloud")
    s.set_defaults(func=cmd_stand)

    s = sub.add_parser("sensor", parents=[common], help="export a sensor shape as a cloud")
    s.add_argument("--preset", help="sensor name (config or preset)")
    s.add_argument("--fov", type=float)
    s.add_argument("--res", type=float)
    s.add_argument("--range", type=float)
    s.add_argument("--step", type=float)
    s.add_argument("--planes", type=int, help="number of planes for a multi-plane sensor")
    s.add_argument("--vfov", type=float, default=30.0, help="vertical field of view of a multi-plane sensor")
    s.add_argument("--export", help="output file (.csv or .ply)")
    s.set_defaults(func=cmd_sensor)

    s = sub.add_parser("trajectory", parents=[common], help="export a trajectory as CSV")
    s.add_argument("name", nargs="?", default="handheld-loop", help="trajectory name (config or preset)")
    s.add_argument("--step", type=float, help="override the pose step in metres")
    s.add_argument("--export", help="output CSV")
    s.set_defaults(func=cmd_trajectory)

    s = sub.add_parser("scan", parents=[common], help="simulate a scan of a stand cloud")
    s.add_argument("--stand", required=True, help="stand cloud file")
    s.add_argument("--sensor", default="plane-270")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--trajectory", default="handheld-loop", help="trajectory name (config or preset)")
    g.add_argument("--trajectory-file", help="trajectory CSV")
    s.add_argument("--search-radius", type=float)
    s.add_argument("--noise", type=float, help="noise sigma in metres")
    s.add_argument("--dedupe", action="store_true")
    s.add_argument("--name", help="name used in output file names")
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("control", parents=[common], help="uniform random subsample of a stand")
    s.add_argument("--stand", required=True)
    s.add_argument("--count", type=int)
    s.add_argument("--match", help="scan cloud whose point count to copy")
    s.add_argument("--name", default="control")
    s.set_defaults(func=cmd_control)

    s = sub.add_parser("analyze", help="density, profile and occlusion analyses")
    asub = s.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    a = asub.add_parser("density", parents=[common])
    a.add_argument("cloud")
    a.add_argument("--voxel-edge", type=float)
    a.set_defaults(func=cmd_analyze_density)
    a = asub.add_parser("profile", parents=[common])
    a.add_argument("cloud")
    a.add_argument("--axis", choices=("radial_xy", "height"), default="radial_xy")
    a.add_argument("--bins", type=int)
    a.add_argument("--voxel-edge", type=float)
    a.set_defaults(func=cmd_analyze_profile)
    a = asub.add_parser("occlusion", parents=[common])
    a.add_argument("--source", required=True)
    a.add_argument("--scan", required=True)
    a.add_argument("--radius", type=float, help="match radius (default 2 x search radius)")
    a.set_defaults(func=cmd_analyze_occlusion)

    s = sub.add_parser("report", parents=[common], help="summary table over scans of one stand")
    s.add_argument("--source", required=True)
    s.add_argument("--control")
    s.add_argument("--scan", action="append", default=[], metavar="NAME=FILE")
    s.add_argument("--stand-name", default="stand")
    s.add_argument("--voxel-edge", type=float)
    s.add_argument("--radius", type=float)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("pipeline", parents=[common], help="run every stage from one config")
    s.set_defaults(func=cmd_pipeline)
    return p


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"simtreels: warning: {message}", file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="simtreels: %(message)s", stream=sys.stderr, force=True)
    old_show = warnings.showwarning
    warnings.showwarning = _show_warning
    try:
        return int(args.func(args) or 0)
    except SimTreeError as exc:
        print(f"simtreels: error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"simtreels: error[OutputError]: {exc}", file=sys.stderr)
        return OUTPUT_EXIT
    finally:
        warnings.showwarning = old_show


if __name__ == "__main__":
    sys.exit(main())
