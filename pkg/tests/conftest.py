import numpy as np
import pytest

from meshqa.config import Config
from meshqa.dataset import DatasetManifest
from meshqa.mesh import Mesh
from meshqa.synthetic import write_dataset


def small_config(**changes) -> Config:
    """Quarter-resolution pipeline with narrow layers; same structure as the defaults."""
    base = dict(uv_resolution=64, color_resolution=128, feature_resolution=32,
                color_patch=16, feature_patch=4, c1=4, c2=4, d=8, head_hidden=16)
    base.update(changes)
    return Config(**base)


@pytest.fixture
def tiny_config():
    return small_config()


@pytest.fixture(scope="session")
def dataset_one(tmp_path_factory):
    """8 distorted copies of one synthetic textured sphere."""
    return DatasetManifest.load(write_dataset(tmp_path_factory.mktemp("ds1"), contents=1))


@pytest.fixture(scope="session")
def dataset_five(tmp_path_factory):
    """Five source contents, 40 pairs."""
    return DatasetManifest.load(write_dataset(tmp_path_factory.mktemp("ds5"), contents=5,
                                              n_lat=10, n_lon=16, texture_size=128))


@pytest.fixture
def tetrahedron():
    v = np.array([[1.0, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]])
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Mesh(v, f)


@pytest.fixture
def colored_quad():
    """Unit square in the z=0 plane facing +z, one colour per corner."""
    v = np.array([[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.5, 0.5, 0.0], [-0.5, 0.5, 0.0]])
    f = np.array([[0, 1, 2], [0, 2, 3]])
    colors = np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0]])
    return Mesh(v, f, colors=colors)
