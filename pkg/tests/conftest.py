import os

import numpy as np
import pytest

from sqparse import geometry as G
from sqparse.io import Mesh

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def box_mesh(ex=1.0, ey=1.0, ez=1.0) -> Mesh:
    hx, hy, hz = ex / 2, ey / 2, ez / 2
    v = np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    f = np.array([
        [0, 1, 3], [0, 3, 2],
        [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1],
        [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4],
        [1, 5, 7], [1, 7, 3],
    ])
    return Mesh(v, f)


def unit_sphere() -> G.ShapeParams:
    return G.ShapeParams([1.0, 1.0, 1.0], [1.0, 1.0])


def sphere_ensemble(radius: float, center=(0.0, 0.0, 0.0), gamma=1.0) -> G.Ensemble:
    shape = G.ShapeParams([radius] * 3, [1.0, 1.0])
    pose = G.Pose(t=-np.asarray(center, dtype=float))
    return G.Ensemble((G.Superquadric(shape, pose),), [gamma])


@pytest.fixture
def cube12() -> Mesh:
    return box_mesh()


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)
