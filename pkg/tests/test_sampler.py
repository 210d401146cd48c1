import numpy as np
import pytest
from scipy.spatial import cKDTree

from sqparse import geometry as G
from sqparse import sampler as S
from sqparse.errors import DegenerateMesh
from sqparse.io import Mesh

from conftest import unit_sphere


def nn_distances(points):
    d, _ = cKDTree(points).query(points, k=2)
    return d[:, 1]


def test_sphere_sample_count_and_radius():
    samples = S.sample_superquadric(unit_sphere(), 200, "uniform_arc")
    assert len(samples) == 200
    np.testing.assert_allclose(np.linalg.norm(samples.points_local, axis=1), 1.0, atol=1e-8)


def test_sphere_spacing_cv():
    nn = nn_distances(S.sample_superquadric(unit_sphere(), 200).points_local)
    assert nn.std() / nn.mean() <= 0.5


def test_near_cube_coverage():
    shape = G.ShapeParams([1.0, 1.0, 1.0], [0.1, 0.1])
    pts = S.sample_superquadric(shape, 200).points_local
    assert np.abs(pts).max() <= 1.0 + 1e-9
    octant = (pts[:, 0] > 0) * 4 + (pts[:, 1] > 0) * 2 + (pts[:, 2] > 0)
    for o in range(8):
        sel = pts[octant == o]
        assert len(sel) > 0
        assert np.abs(sel).max() >= 0.9


@pytest.mark.parametrize("eps", [(0.1, 1.9), (0.45, 0.45), (1.0, 1.0), (1.9, 0.1)])
@pytest.mark.parametrize("mode", ["uniform_arc", "uniform_angle"])
def test_membership_all_modes(eps, mode):
    shape = G.ShapeParams([0.7, 0.25, 0.4], eps)
    samples = S.sample_superquadric(shape, 157, mode)
    assert len(samples) == 157
    np.testing.assert_allclose(G.implicit_value(shape, samples.points_local), 1.0, atol=1e-8)
    assert np.all(np.abs(samples.grid.etas) <= np.pi / 2)
    assert np.all(np.abs(samples.grid.omegas) <= np.pi)


def test_monotone_coverage_on_sphere():
    gaps = []
    for k in (50, 100, 200, 400):
        pts = S.sample_superquadric(unit_sphere(), k).points_local
        gaps.append(nn_distances(pts).max())
    assert all(b <= a for a, b in zip(gaps, gaps[1:]))


def test_sample_count_precondition():
    with pytest.raises(ValueError):
        S.sample_superquadric(unit_sphere(), 3)


def test_determinism():
    a = S.sample_superquadric(unit_sphere(), 123).points_local
    b = S.sample_superquadric(unit_sphere(), 123).points_local
    assert np.array_equal(a, b)


def test_mesh_sampling_single_triangle():
    tri = Mesh(np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]), np.array([[0, 1, 2]]))
    cloud = S.sample_mesh_surface(tri, 1000, seed=0)
    pts = cloud.points
    assert np.all(np.abs(pts[:, 2]) <= 1e-12)  # in the triangle plane
    assert np.all(pts[:, 0] >= 0) and np.all(pts[:, 1] >= 0)
    assert np.all(pts[:, 0] + pts[:, 1] <= 1 + 1e-12)


def test_mesh_sampling_area_weighting(cube12):
    cloud = S.sample_mesh_surface(cube12, 100_000, seed=1)
    pts = cloud.points
    for axis in range(3):
        for side in (-0.5, 0.5):
            frac = np.mean(np.abs(pts[:, axis] - side) < 1e-9)
            assert frac == pytest.approx(1.0 / 6.0, abs=0.01)


def test_mesh_sampling_determinism(cube12):
    a = S.sample_mesh_surface(cube12, 500, seed=7).points
    b = S.sample_mesh_surface(cube12, 500, seed=7).points
    assert np.array_equal(a, b)
    c = S.sample_mesh_surface(cube12, 500, seed=8).points
    assert not np.array_equal(a, c)


def test_degenerate_mesh():
    flat = Mesh(np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]), np.array([[0, 1, 2]]))
    with pytest.raises(DegenerateMesh):
        S.sample_mesh_surface(flat, 10, seed=0)
    empty = Mesh(np.zeros((3, 3)), np.zeros((0, 3), dtype=int))
    with pytest.raises(DegenerateMesh):
        S.sample_mesh_surface(empty, 10, seed=0)


def test_uniform_angle_is_worse_on_sphere():
    arc = nn_distances(S.sample_superquadric(unit_sphere(), 200, "uniform_arc").points_local)
    naive = nn_distances(S.sample_superquadric(unit_sphere(), 200, "uniform_angle").points_local)
    assert arc.std() / arc.mean() < naive.std() / naive.mean()
