import numpy as np
import pytest

from simtreels.cloud.model import LabelledCloud
from simtreels.sensor import build_single_plane
from simtreels.treegen import LevelParams, TreeDefinition


def random_cloud(n, seed=0, extent=1.0, n_trees=3):
    g = np.random.default_rng(seed)
    return LabelledCloud(g.uniform(-extent, extent, size=(n, 3)), g.integers(0, n_trees, n),
                         g.integers(0, 4, n))


def plate(y, half=0.5, spacing=0.01, level=3, tree_id=7, seed=0):
    """Square plate of points in the plane ``y = const``, centred on the X axis."""
    g = np.random.default_rng(seed)
    n = int(round((2 * half / spacing) ** 2))
    xz = g.uniform(-half, half, size=(n, 2))
    xyz = np.column_stack([xz[:, 0], np.full(n, float(y)), xz[:, 1]])
    return LabelledCloud(xyz, np.full(n, tree_id), np.full(n, level))


@pytest.fixture
def small_tree_def():
    return TreeDefinition(
        name="small", levels=3, trunk_height=1.5, trunk_base_radius=0.06, leaves_per_tip=4,
        leaf_radius=0.04, sample_spacing=0.02,
        level_params=(
            LevelParams(taper=(0.4, 0.0), curvature=(5.0, 2.0)),
            LevelParams(child_count=(4, 1), length_ratio=(0.5, 0.1), base_radius_ratio=(0.5, 0.05),
                        taper=(0.4, 0.05), down_angle=(50, 10), curvature=(15, 5),
                        start_fraction_range=(0.4, 0.95)),
            LevelParams(child_count=(3, 1), length_ratio=(0.5, 0.1), base_radius_ratio=(0.5, 0.05),
                        taper=(0.5, 0.05), down_angle=(40, 10), curvature=(10, 5)),
        ))


@pytest.fixture
def coarse_shape():
    return build_single_plane(90.0, 15.0, 4.0, 0.02)


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line and returns ``ok``."""

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
