import json

import numpy as np
import pytest

from simtreels.cli import main
from simtreels.cloud import LabelledCloud, read_cloud, write_cloud
from simtreels.cloud.io import read_meta

TINY = """
seed = 5
output = "unused"

[trees.mini]
preset = "avocado"
trunk_height = 1.2
trunk_base_radius = 0.06
leaves_per_tip = 4
sample_spacing = 0.02

[stand]
preset = "orchard-6x10"
rows = 1
trees_per_row = 2
definition = "mini"

[sensors.coarse]
kind = "single_plane"
fov_deg = 270.0
angular_res_deg = 3.0
max_range_m = 10.0
range_step_m = 0.04

[trajectories.walk]
preset = "handheld-loop"
step = 0.5

[trajectories.drive]
preset = "ground-rows"
step = 0.5

[trajectories.fly]
preset = "aerial-grid"
altitude = 8.0
step = 0.5

[[scan_runs]]
name = "handheld"
sensor = "coarse"
trajectory = "walk"

[[scan_runs]]
name = "ground"
sensor = "coarse"
trajectory = "drive"

[[scan_runs]]
name = "aerial"
sensor = "coarse"
trajectory = "fly"

[scan]
search_radius = 0.04
noise_sigma = 0.02
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_pipeline_outputs(tmp_path, cfg, capsys):
    out = tmp_path / "a"
    code, stdout, err = _run(capsys, "pipeline", "--config", cfg, "--out", out, "-q")
    assert code == 0, err
    names = set(_tree(out))
    for run in ("handheld", "ground", "aerial"):
        assert {f"scan_{run}.ply", f"scan_{run}.stats.json", f"trajectory_{run}.csv",
                f"occlusion_{run}.ply", f"profile_{run}_radial_xy.csv", f"profile_{run}_height.csv"} <= names
    assert {"stand.ply", "control.ply", "placements.csv", "report.csv", "report.txt",
            "config.resolved.json", "occlusion_control.ply"} <= names
    header = (out / "report.csv").read_text().splitlines()[0]
    assert header == "stand,metric,Control,handheld,ground,aerial"
    assert "% of points occluded" in stdout
    control, hand = read_cloud(out / "control.ply"), read_cloud(out / "scan_handheld.ply")
    assert len(control) == len(hand) > 0
    # every artifact carries the config hash and seed
    resolved = json.loads((out / "config.resolved.json").read_text())
    for name in names:
        if name.endswith(".meta.json") or name == "config.resolved.json":
            continue
        meta = json.loads((out / name).read_text()) if name.endswith(".stats.json") else read_meta(out / name)
        assert meta["config_hash"] == resolved["config_hash"], name
        assert meta["seed"] == 5, name


def test_pipeline_reproducible_and_worker_invariant(tmp_path, cfg, capsys):
    runs = []
    for k, workers in enumerate([1, 1, 4]):
        out = tmp_path / f"r{k}"
        assert _run(capsys, "pipeline", "--config", cfg, "--out", out, "--workers", workers, "-q")[0] == 0
        runs.append(_tree(out))
    assert runs[0] == runs[1]
    assert runs[0] == runs[2]


def test_seed_flag_changes_outputs(tmp_path, cfg, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(capsys, "stand", "--config", cfg, "--out", a, "-q")[0] == 0
    assert _run(capsys, "stand", "--config", cfg, "--out", b, "--seed", "6", "-q")[0] == 0
    assert read_meta(b / "stand.ply")["seed"] == 6
    assert (a / "placements.csv").read_text() != (b / "placements.csv").read_text()


def test_stage_by_stage(tmp_path, cfg, capsys):
    out = tmp_path / "s"
    common = ["--config", cfg, "--out", out, "-q"]
    assert _run(capsys, "stand", *common)[0] == 0
    assert _run(capsys, "trajectory", "drive", *common)[0] == 0
    code, stdout, _ = _run(capsys, "scan", "--stand", out / "stand.ply", "--sensor", "coarse",
                           "--trajectory-file", out / "trajectory_drive.csv", "--name", "g", *common)
    assert code == 0 and "returns" in stdout
    assert _run(capsys, "control", "--stand", out / "stand.ply", "--match", out / "scan_g.ply", *common)[0] == 0
    assert len(read_cloud(out / "control.ply")) == len(read_cloud(out / "scan_g.ply"))
    assert _run(capsys, "analyze", "density", out / "scan_g.ply", *common)[0] == 0
    dens = json.loads((out / "density_scan_g.json").read_text())
    assert dens["voxel_edge"] == 0.5 and dens["total_points"] == len(read_cloud(out / "scan_g.ply"))
    assert _run(capsys, "analyze", "profile", out / "scan_g.ply", "--axis", "height", "--bins", "8", *common)[0] == 0
    assert len((out / "profile_scan_g_height.csv").read_text().splitlines()) == 9
    code, stdout, _ = _run(capsys, "analyze", "occlusion", "--source", out / "stand.ply", "--scan",
                           out / "scan_g.ply", *common)
    assert code == 0 and "occluded" in stdout
    code, stdout, _ = _run(capsys, "report", "--source", out / "stand.ply", "--control", out / "control.ply",
                           "--scan", f"ground={out / 'scan_g.ply'}", "--stand-name", "mini", *common)
    assert code == 0
    assert (out / "report.csv").read_text().splitlines()[0] == "stand,metric,Control,ground"


def test_tree_subcommand(tmp_path, capsys):
    code, _, err = _run(capsys, "tree", "--definition", "avocado", "--spacing", "0.05", "--tree-seed", "3",
                        "--out", tmp_path, "--format", "csv", "-q")
    assert code == 0, err
    c = read_cloud(tmp_path / "tree_avocado_3.csv")
    assert (c.tree_id == 3).all() and set(np.unique(c.level)) == {0, 1, 2, 3}


def test_sensor_export(tmp_path, capsys):
    path = tmp_path / "shape.csv"
    code, stdout, _ = _run(capsys, "sensor", "--fov", "270", "--res", "0.675", "--range", "15", "--step", "0.02",
                           "--export", path, "--out", tmp_path)
    assert code == 0
    assert "401 scan lines x 750 samples = 300750 points" in stdout
    with open(path) as fh:
        assert sum(1 for _ in fh) == 300_751
    meta = read_meta(path)
    assert "config_hash" in meta and "seed" in meta


def test_missing_stand_file(tmp_path, capsys):
    code, _, err = _run(capsys, "scan", "--stand", tmp_path / "missing.ply", "--out", tmp_path)
    assert code == 4
    assert err.startswith("simtreels: error[InputFileError]:") and "missing.ply" in err


def test_usage_errors(capsys):
    code, _, err = _run(capsys, "scan", "--bogus")
    assert code == 2 and "error[UsageError]" in err
    assert _run(capsys, "teleport")[0] == 2
    assert _run(capsys)[0] == 2


def test_error_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[stand]\nkind = 'grove'\n")
    code, _, err = _run(capsys, "stand", "--config", bad, "--out", tmp_path)
    assert code == 3 and "error[ConfigError]" in err
    assert _run(capsys, "stand", "--config", tmp_path / "nope.cfg")[0] == 4

    empty = tmp_path / "empty.ply"
    write_cloud(LabelledCloud.empty(), empty)
    code, _, err = _run(capsys, "analyze", "density", empty, "--out", tmp_path)
    assert code == 5 and "error[EmptyCloud]" in err

    obj = tmp_path / "flat.obj"
    obj.write_text("v 0 0 0\nv 1 0 0\nv 2 0 0\ng trunk\nf 1 2 3\n")
    code, _, err = _run(capsys, "tree", "--obj", obj, "--out", tmp_path)
    assert code == 6 and "error[DegenerateMesh]" in err

    crowded = tmp_path / "crowded.cfg"
    crowded.write_text("[stand]\npreset = 'forest-min6'\nextent = [0, 0, 5, 5]\ntree_count = 2\n"
                       "min_spacing = 100.0\nmax_attempts = 50\n")
    code, _, err = _run(capsys, "stand", "--config", crowded, "--out", tmp_path)
    assert code == 7 and "error[PlacementFailure]" in err

    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = _run(capsys, "sensor", "--out", blocker / "sub")
    assert code == 8 and "error[OutputError]" in err

    stand = tmp_path / "s.ply"
    write_cloud(LabelledCloud(np.zeros((3, 3)), [1, 1, 1], [0, 0, 0]), stand)
    assert _run(capsys, "control", "--stand", stand, "--count", "4", "--out", tmp_path)[0] == 3


def test_workers_env_default(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SIMTREELS_WORKERS", "0")
    code, _, err = _run(capsys, "sensor", "--out", tmp_path)
    assert code == 3 and "--workers" in err
