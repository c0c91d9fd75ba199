"""Wall time and peak memory of a full-size handheld scan.

    python scripts/benchmark_perf.py --rows 5 --trees-per-row 5 --json perf.json

Builds the avocado orchard, indexes it and scans it with the single-plane
sensor on the handheld-loop preset. Prints one line per stage and, with
``--json``, writes the numbers for the acceptance suite.
"""

import argparse
import json
import os
import resource
import time

from simtreels.cloud import build_index
from simtreels.config import config_from_dict
from simtreels.scanner import scan_stand
from simtreels.stand import assemble_stand, layout_stand


def peak_rss_gb() -> float:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 2**20  # KiB on Linux


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=5)
    ap.add_argument("--trees-per-row", type=int, default=5)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--noise", type=float, default=0.02)
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args()

    cfg = config_from_dict({
        "seed": 1,
        "stand": {"preset": "orchard-6x10", "rows": args.rows, "trees_per_row": args.trees_per_row},
        "scan_runs": [{"name": "handheld", "sensor": "plane-270", "trajectory": "handheld-loop"}],
        "scan": {"noise_sigma": args.noise},
    })
    out = {"rows": args.rows, "trees_per_row": args.trees_per_row, "workers": args.workers}
    t0 = time.perf_counter()

    placements = layout_stand(cfg.stand.layout)
    stand = assemble_stand(placements, cfg.trees, workers=args.workers)
    t1 = time.perf_counter()
    print(f"stand: {len(stand):,} points in {t1 - t0:.1f} s")

    index = build_index(stand, cfg.scan.search_radius)
    t2 = time.perf_counter()
    print(f"index: {t2 - t1:.1f} s")

    traj = cfg.trajectories["handheld-loop"].build(cfg.stand)
    shape = cfg.sensors["plane-270"].build()
    result = scan_stand(stand, shape, traj, cfg.scan, workers=args.workers, index=index)
    t3 = time.perf_counter()
    print(f"scan: {result.total_returns:,} returns from {len(traj)} poses in {t3 - t2:.1f} s")

    out.update(stand_points=len(stand), poses=len(traj), returns=result.total_returns,
               stand_seconds=t1 - t0, index_seconds=t2 - t1, scan_seconds=t3 - t2, total_seconds=t3 - t0,
               peak_rss_gb=peak_rss_gb())
    print(f"total {out['total_seconds']:.1f} s, peak RSS {out['peak_rss_gb']:.2f} GB")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(out, fh, indent=1)


if __name__ == "__main__":
    main()
