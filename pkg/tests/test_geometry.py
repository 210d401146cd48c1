import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqparse import geometry as G
from sqparse.errors import InvalidShape, ZeroQuaternion

from conftest import unit_sphere


def test_signed_pow_examples():
    assert G.signed_pow(0.5, 1.0) == pytest.approx(0.5)
    assert G.signed_pow(-1.0, 0.3) == pytest.approx(-1.0)
    assert G.signed_pow(-0.25, 0.5) == pytest.approx(-0.5)
    assert G.signed_pow(0.0, 0.3) == 0.0


@given(st.floats(-2, 2, allow_nan=False), st.floats(0.05, 3))
def test_signed_pow_odd(x, p):
    assert G.signed_pow(-x, p) == pytest.approx(-G.signed_pow(x, p), abs=1e-15)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.05, 3))
def test_signed_pow_monotone(a, b, p):
    lo, hi = min(a, b), max(a, b)
    assert G.signed_pow(lo, p) <= G.signed_pow(hi, p) + 1e-15


def test_surface_point_sphere_equator():
    np.testing.assert_allclose(G.surface_point(unit_sphere(), 0.0, 0.0), [1.0, 0.0, 0.0], atol=1e-15)


@pytest.mark.parametrize("eps", [(0.1, 0.1), (0.7, 1.3), (1.9, 1.9)])
def test_surface_point_pole(eps):
    shape = G.ShapeParams([2.0, 3.0, 4.0], eps)
    np.testing.assert_allclose(G.surface_point(shape, np.pi / 2, 0.7), [0.0, 0.0, 4.0], atol=1e-12)
    np.testing.assert_allclose(G.surface_point(shape, -np.pi / 2, -1.1), [0.0, 0.0, -4.0], atol=1e-12)


def test_surface_point_ellipsoid_equation():
    shape = G.ShapeParams([2.0, 1.0, 1.0], [1.0, 1.0])
    rng = np.random.default_rng(0)
    eta = rng.uniform(-np.pi / 2, np.pi / 2, 200)
    omega = rng.uniform(-np.pi, np.pi, 200)
    p = G.surface_point(shape, eta, omega)
    lhs = (p[:, 0] / 2) ** 2 + p[:, 1] ** 2 + p[:, 2] ** 2
    np.testing.assert_allclose(lhs, 1.0, atol=1e-12)


@settings(max_examples=150, deadline=None)
@given(
    st.floats(0.1, 1.9), st.floats(0.1, 1.9),
    st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(0.01, 1.0),
    st.floats(-np.pi / 2 + 1e-3, np.pi / 2 - 1e-3), st.floats(-np.pi, np.pi),
)
def test_surface_membership_and_bounds(e1, e2, a1, a2, a3, eta, omega):
    shape = G.ShapeParams([a1, a2, a3], [e1, e2])
    p = G.surface_point(shape, eta, omega)
    assert abs(G.implicit_value(shape, p) - 1.0) <= 1e-8
    assert np.all(np.abs(p) <= shape.alpha + 1e-12)


def test_implicit_examples():
    sphere = unit_sphere()
    assert G.implicit_value(sphere, [1.0, 0.0, 0.0]) == pytest.approx(1.0)
    assert G.implicit_value(sphere, [0.0, 0.0, 0.0]) == 0.0
    assert G.implicit_value(sphere, [2.0, 0.0, 0.0]) == pytest.approx(4.0)
    assert G.implicit_value(G.ShapeParams([0.3, 2, 2], [0.4, 1.6]), [0.0, 0.0, 0.0]) == 0.0


def test_quat_examples():
    np.testing.assert_allclose(G.quat_to_rotmat([1, 0, 0, 0]), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(G.quat_to_rotmat([2, 0, 0, 0]), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(G.quat_to_rotmat([0, 0, 0, 1]), np.diag([-1.0, -1.0, 1.0]), atol=1e-15)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.floats(1e-3, 1e3))
def test_quat_scale_invariance(q, s):
    q = np.asarray(q)
    if np.linalg.norm(q) < 1e-6:
        q = q + np.array([1.0, 0, 0, 0])
    np.testing.assert_allclose(G.quat_to_rotmat(q), G.quat_to_rotmat(s * q), atol=1e-12)


def test_quat_rotation_properties():
    r = G.quat_to_rotmat([0.3, -0.5, 0.7, 0.2])
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


def test_zero_quaternion():
    with pytest.raises(ZeroQuaternion):
        G.quat_to_rotmat([0.0, 0.0, 0.0, 0.0])
    with pytest.raises(ZeroQuaternion):
        G.world_to_local(G.Pose(q=[1e-15, 0, 0, 0]), [1.0, 2.0, 3.0])


def test_world_to_local_examples():
    identity = G.Pose()
    np.testing.assert_allclose(G.world_to_local(identity, [0.3, 0.1, -0.2]), [0.3, 0.1, -0.2])
    centered = G.Pose(t=[-1.0, 0.0, 0.0])  # primitive centered at world (1, 0, 0)
    np.testing.assert_allclose(G.world_to_local(centered, [1.0, 0.0, 0.0]), [0.0, 0.0, 0.0])
    np.testing.assert_allclose(G.local_to_world(centered, [0.0, 0.0, 0.0]), [1.0, 0.0, 0.0])
    np.testing.assert_allclose(G.local_to_world(identity, [0.4, -0.1, 0.9]), [0.4, -0.1, 0.9])


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-1, 1), min_size=4, max_size=4),
    st.lists(st.floats(-2, 2), min_size=3, max_size=3),
    st.lists(st.floats(-3, 3), min_size=3, max_size=3),
    st.lists(st.floats(-3, 3), min_size=3, max_size=3),
)
def test_transform_round_trip_and_isometry(q, t, a, b):
    q = np.asarray(q)
    if np.linalg.norm(q) < 1e-6:
        q = q + np.array([1.0, 0, 0, 0])
    pose = G.Pose(q=q, t=t)
    a, b = np.asarray(a), np.asarray(b)
    np.testing.assert_allclose(G.local_to_world(pose, G.world_to_local(pose, a)), a, atol=1e-12)
    d_world = np.linalg.norm(a - b)
    d_local = np.linalg.norm(G.world_to_local(pose, a) - G.world_to_local(pose, b))
    assert d_local == pytest.approx(d_world, abs=1e-12)


def test_shape_validation():
    with pytest.raises(InvalidShape):
        G.ShapeParams([1.0, -1.0, 1.0], [1.0, 1.0])
    with pytest.raises(InvalidShape):
        G.ShapeParams([1.0, 1.0, 1.0], [0.05, 1.0])
    with pytest.raises(InvalidShape):
        G.ShapeParams([1.0, 1.0, 1.0], [1.0, 2.0])


def test_ensemble_validation():
    prim = G.Superquadric(unit_sphere(), G.Pose())
    with pytest.raises(ValueError):
        G.Ensemble((prim,), [0.5, 0.5])
    with pytest.raises(ValueError):
        G.Ensemble((prim,), [1.5])
    with pytest.raises(ValueError):
        G.Ensemble((), [])
