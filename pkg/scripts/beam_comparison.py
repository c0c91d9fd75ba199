"""Occlusion of a single-plane sensor against a 9-plane one on the same drive.

    python scripts/beam_comparison.py                 # configs/ground_beams.cfg
    python scripts/beam_comparison.py --planes 3 5 9 16

Every sensor shares the 270 degree fan; extra planes spread over 30 degrees.
"""

import argparse
import time
from pathlib import Path

from simtreels.analysis import occlusion_map
from simtreels.cloud import build_index
from simtreels.config import load_config
from simtreels.scanner import scan_stand
from simtreels.sensor import build_multi_plane, build_single_plane
from simtreels.stand import assemble_stand, layout_stand

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "ground_beams.cfg"))
    ap.add_argument("--trajectory", default="ground-rows")
    ap.add_argument("--planes", type=int, nargs="+", default=[1, 9])
    ap.add_argument("--vfov", type=float, default=30.0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = load_config(args.config)
    stand = assemble_stand(layout_stand(cfg.stand.layout), cfg.trees, workers=args.workers,
                           sample_spacing=cfg.stand.sample_spacing)
    index = build_index(stand, cfg.scan.search_radius)
    traj = cfg.trajectories[args.trajectory].build(cfg.stand)
    print(f"{len(stand):,} stand points, {len(traj)} poses on {args.trajectory}")
    print(f"{'planes':>6}  {'returns':>10}  {'occluded':>9}  {'seconds':>7}")
    for n in args.planes:
        t0 = time.perf_counter()
        if n == 1:
            shape = build_single_plane(270.0, 0.675, 15.0, 0.02)
        else:
            shape = build_multi_plane(270.0, 0.675, 15.0, 0.02, n, args.vfov)
        res = scan_stand(stand, shape, traj, cfg.scan, workers=args.workers, index=index)
        occ = occlusion_map(stand, res.cloud, cfg.match_radius, workers=args.workers).occluded_fraction
        print(f"{n:>6}  {res.total_returns:>10,}  {100 * occ:>8.1f}%  {time.perf_counter() - t0:>7.0f}")


if __name__ == "__main__":
    main()
