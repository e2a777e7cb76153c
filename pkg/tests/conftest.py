import numpy as np
import pytest

from lidarwx.pointcloud import LabelArray, PointCloud
from lidarwx.scene import SceneSpec, generate_scene


def random_cloud(rng, n, scale=30.0):
    """Float32-representable random cloud (so scan round-trips are exact)."""
    xyz = rng.uniform(-scale, scale, (n, 3)).astype(np.float32)
    inten = rng.uniform(0, 1, n).astype(np.float32)
    return PointCloud.from_xyz(xyz, inten)


def small_spec(seed=0, **kw):
    base = dict(n_ground=600, n_wall=200, n_pole=80, n_vehicle=200, n_clutter=80, seed=seed)
    base.update(kw)
    return SceneSpec(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scenes():
    return [generate_scene(small_spec(seed=i)) for i in range(4)]


@pytest.fixture
def labelled_cloud(rng):
    cloud = random_cloud(rng, 500)
    labels = LabelArray(rng.integers(0, 5, 500), rng.integers(0, 100, 500))
    return cloud, labels


# acceptance verdicts, printed at the end of the run even when output is captured
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
