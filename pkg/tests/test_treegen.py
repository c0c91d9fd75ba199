import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from simtreels.errors import ConfigError, DegenerateMesh, InputFileError
from simtreels.scanner import ScanParams, simulate_scan
from simtreels.cloud import build_index
from simtreels.sensor import SensorShape
from simtreels.trajectory import Trajectory
from simtreels.treegen import (
    PRESETS, LevelParams, TreeDefinition, TriangleMesh, build_skeleton, definition_from_dict, dump_definition,
    generate_tree, get_definition, load_definition, load_obj, required_spacing, sample_mesh,
)
from simtreels.treegen.mesh import default_label, mesh_area

UNIT_SQUARE = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float),
                           np.array([[0, 1, 2], [0, 2, 3]]), [0, 0], [4, 4])


def test_generate_is_deterministic(small_tree_def):
    a = generate_tree(small_tree_def, 5)
    b = generate_tree(small_tree_def, 5)
    assert a.content_hash() == b.content_hash()
    assert a.metadata == b.metadata
    assert not a.equals(generate_tree(small_tree_def, 6))


def test_labels_and_ids(small_tree_def):
    c = generate_tree(small_tree_def, 12)
    assert set(np.unique(c.level)) == {0, 1, 2, 3}
    assert (c.tree_id == 12).all()
    assert c.metadata["seed"] == 12 and c.metadata["definition"] == "small"


def test_trunk_only():
    d = TreeDefinition(name="pole", levels=1, trunk_height=2.0, trunk_base_radius=0.1, sample_spacing=0.01)
    c = generate_tree(d, 3)
    assert (c.level == 0).all()
    assert (np.hypot(c.xyz[:, 0], c.xyz[:, 1]) <= 0.1 + 0.01).all()
    assert (c.xyz[:, 2] <= 2.0 + 1e-9).all() and (c.xyz[:, 2] >= -1e-9).all()
    # lateral area of a cone frustum over spacing^2
    r1 = 0.1 * 0.5
    area = np.pi * (0.1 + r1) * np.hypot(2.0, 0.1 - r1)
    assert len(c) == pytest.approx(area / 0.01**2, rel=0.05)


def test_bounding_boxes_similar_across_seeds():
    d = get_definition("avocado").with_spacing(0.06)
    dims = np.array([np.ptp(generate_tree(d, s).xyz, axis=0) for s in range(1, 21)])
    med = np.median(dims, axis=0)
    assert ((dims >= 0.5 * med) & (dims <= 1.5 * med)).all()


def test_children_attach_to_parent(small_tree_def):
    stems = build_skeleton(small_tree_def, 9)
    by_path = {s.path: s for s in stems}
    for s in stems:
        if not s.path:
            continue
        parent = by_path[s.path[:-1]]
        assert s.level == parent.level + 1
        seg_a, seg_b = parent.points[:-1], parent.points[1:]
        ab = seg_b - seg_a
        t = np.clip(((s.points[0] - seg_a) * ab).sum(1) / (ab * ab).sum(1), 0, 1)
        closest = seg_a + t[:, None] * ab
        dist = np.linalg.norm(closest - s.points[0], axis=1).min()
        assert dist <= parent.radii.max()


def test_median_spacing_within_target():
    d = get_definition("avocado").with_spacing(0.03)
    c = generate_tree(d, 4)
    nn, _ = cKDTree(c.xyz).query(c.xyz, k=2)
    assert np.median(nn[:, 1]) <= 0.03


def test_invalid_definition():
    with pytest.raises(ConfigError):
        TreeDefinition(levels=5)
    with pytest.raises(ConfigError):
        TreeDefinition(levels=2)
    with pytest.raises(ConfigError):
        TreeDefinition(sample_spacing=0.0)
    with pytest.raises(ConfigError):
        LevelParams(taper=(1.5, 0.0)).validate("x")
    with pytest.raises(ConfigError):
        generate_tree(PRESETS["avocado"], -1)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_toml_round_trip(tmp_path, name):
    d = PRESETS[name]
    path = tmp_path / f"{name}.toml"
    path.write_text(dump_definition(d))
    assert load_definition(path) == d
    assert definition_from_dict(d.to_dict()) == d


def test_definition_file_errors(tmp_path):
    with pytest.raises(InputFileError):
        load_definition(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text('name = "x"\nlevels = 1\nbogus = 2\n[[level]]\n')
    with pytest.raises(ConfigError, match="bogus"):
        load_definition(bad)


def test_required_spacing():
    assert required_spacing(0.02, 1) == 0.01
    assert required_spacing(0.02, 2) == 0.005
    with pytest.raises(ConfigError):
        required_spacing(0.0)


def test_unit_square_sampling():
    c = sample_mesh(UNIT_SQUARE, 0.1, seed=1)
    assert 70 <= len(c) <= 130
    assert (c.xyz[:, 2] == 0).all()
    assert ((c.xyz[:, :2] >= 0) & (c.xyz[:, :2] <= 1)).all()
    assert (c.tree_id == 4).all()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_unit_square_count_any_seed(seed):
    # Poisson(100): 100 +- 30 is a 3 sigma band
    n = len(sample_mesh(UNIT_SQUARE, 0.1, seed))
    assert 70 <= n <= 130


def test_leaf_label_inherited():
    tri = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), [[0, 1, 2]], [3], [0])
    c = sample_mesh(tri, 0.05, seed=2)
    assert len(c) > 0 and (c.level == 3).all()


def test_area_weighting():
    # areas 1 and 9, tagged by level to tell them apart
    v = np.array([[0, 0, 0], [2, 0, 0], [0, 1, 0], [0, 0, 1], [6, 0, 1], [0, 3, 1]], float)
    mesh = TriangleMesh(v, [[0, 1, 2], [3, 4, 5]], [1, 2], [0, 0])
    assert mesh.areas() == pytest.approx([1.0, 9.0])
    c = sample_mesh(mesh, 0.05, seed=3)
    n1, n2 = int((c.level == 1).sum()), int((c.level == 2).sum())
    assert abs(n1 - 400) <= 3 * 20
    assert abs(n2 - 3600) <= 3 * 60
    assert n2 / n1 == pytest.approx(9, rel=0.2)


def test_sampling_deterministic():
    assert sample_mesh(UNIT_SQUARE, 0.05, 7).equals(sample_mesh(UNIT_SQUARE, 0.05, 7))


def test_degenerate_mesh():
    flat = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float), [[0, 1, 2]], [0], [0])
    with pytest.raises(DegenerateMesh):
        sample_mesh(flat, 0.1, 0)
    with pytest.raises(ConfigError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]], [0], [0])


def test_plate_hit_with_required_spacing():
    s = required_spacing(0.02)
    plate = TriangleMesh(np.array([[-0.5, 0, -0.5], [0.5, 0, -0.5], [0.5, 0, 0.5], [-0.5, 0, 0.5]], float),
                         [[0, 1, 2], [0, 2, 3]], [3, 3], [1, 1])
    stand = sample_mesh(plate, s, seed=11)
    index = build_index(stand, 0.02)
    g = np.random.default_rng(5)
    aims = np.column_stack([g.uniform(-0.4, 0.4, 100), np.zeros(100), g.uniform(-0.4, 0.4, 100)])
    origin = np.array([0.0, -5.0, 0.0])
    dirs = aims - origin
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    shape = SensorShape(dirs, np.arange(100), 0.02, 8.0, "custom")
    traj = Trajectory(origin[None, :], [[1.0, 0, 0, 0]])
    res = simulate_scan(index, shape, traj, ScanParams(search_radius=0.02))
    assert res.total_returns == 100
    assert (res.cloud.level == 3).all()


def test_default_obj_labels():
    assert default_label("Trunk") == 0
    assert default_label("branch1") == 1
    assert default_label("stem_3") == 2
    assert default_label("leaves") == 3
    with pytest.raises(ConfigError):
        default_label("bark")


def test_load_obj(tmp_path):
    path = tmp_path / "t.obj"
    path.write_text("\n".join([
        "# test", "v 0 0 0", "v 1 0 0", "v 1 1 0", "v 0 1 0", "v 0 0 1",
        "g trunk", "f 1 2 3",
        "usemtl leaf_mat", "f 1/1/1 2/2/2 3/3/3 4/4/4",
        "g twig", "f -1 -2 -3", ""]))
    mesh = load_obj(path, tree_id=8, label_map={"twig": 2})
    assert len(mesh.faces) == 4          # quad fanned into two triangles
    assert mesh.face_label.tolist() == [0, 3, 3, 2]
    assert (mesh.face_tree_id == 8).all()
    assert mesh_area(mesh) == pytest.approx(0.5 + 1.0 + np.sqrt(2) / 2)
    with pytest.raises(ConfigError):
        load_obj(path)                    # "twig" has no default mapping
    with pytest.raises(InputFileError):
        load_obj(tmp_path / "missing.obj")
