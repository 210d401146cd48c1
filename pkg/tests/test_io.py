import json
import struct

import numpy as np
import pytest

from sqparse import geometry as G
from sqparse import io
from sqparse import metrics as ME
from sqparse.errors import (
    NoActivePrimitives,
    ParseError,
    SchemaError,
    UnsupportedFormat,
    UnsupportedVersion,
)
from sqparse.fit import FitTrace, TraceRecord

from conftest import fixture_path, sphere_ensemble

CUBE_VERTS = [(-0.5, -0.5, -0.5), (-0.5, -0.5, 0.5), (-0.5, 0.5, -0.5), (-0.5, 0.5, 0.5),
              (0.5, -0.5, -0.5), (0.5, -0.5, 0.5), (0.5, 0.5, -0.5), (0.5, 0.5, 0.5)]
CUBE_FACES = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]


def write_cube_obj(path):
    with open(path, "w") as fh:
        for v in CUBE_VERTS:
            fh.write(f"v {v[0]} {v[1]} {v[2]}\n")
        for f in CUBE_FACES:
            fh.write("f " + " ".join(str(i + 1) for i in f) + "\n")


def write_cube_ply_ascii(path):
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(CUBE_VERTS)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write(f"element face {len(CUBE_FACES)}\n")
        fh.write("property list uchar int vertex_indices\nend_header\n")
        for v in CUBE_VERTS:
            fh.write(f"{v[0]} {v[1]} {v[2]}\n")
        for f in CUBE_FACES:
            fh.write("4 " + " ".join(str(i) for i in f) + "\n")


def write_cube_ply_binary(path):
    with open(path, "wb") as fh:
        header = (
            "ply\nformat binary_little_endian 1.0\n"
            f"element vertex {len(CUBE_VERTS)}\n"
            "property float x\nproperty float y\nproperty float z\n"
            f"element face {len(CUBE_FACES)}\n"
            "property list uchar int vertex_indices\nend_header\n"
        )
        fh.write(header.encode("ascii"))
        for v in CUBE_VERTS:
            fh.write(struct.pack("<3f", *v))
        for f in CUBE_FACES:
            fh.write(struct.pack("<B4i", 4, *f))


def test_obj_minimal(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    mesh = io.load_mesh(str(p))
    assert len(mesh.vertices) == 3
    assert len(mesh.triangles) == 1


def test_obj_quad_fan(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    mesh = io.load_mesh(str(p))
    assert len(mesh.triangles) == 2
    np.testing.assert_array_equal(mesh.triangles, [[0, 1, 2], [0, 2, 3]])


def test_obj_slash_and_negative_indices(tmp_path):
    p = tmp_path / "mix.obj"
    p.write_text("v 0 0 0\nvn 0 0 1\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1/1 2//1 -1\n")
    mesh = io.load_mesh(str(p))
    np.testing.assert_array_equal(mesh.triangles, [[0, 1, 2]])


def test_obj_errors(tmp_path):
    bad_idx = tmp_path / "bad.obj"
    bad_idx.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    with pytest.raises(ParseError, match="out of range"):
        io.load_mesh(str(bad_idx))
    bad_vertex = tmp_path / "badv.obj"
    bad_vertex.write_text("v 0 zero 0\n")
    with pytest.raises(ParseError, match="badv.obj:1"):
        io.load_mesh(str(bad_vertex))
    with pytest.raises(UnsupportedFormat):
        io.load_mesh(str(tmp_path / "mesh.stl"))


def test_ply_ascii_and_binary_agree(tmp_path):
    a = tmp_path / "cube_ascii.ply"
    b = tmp_path / "cube_bin.ply"
    write_cube_ply_ascii(str(a))
    write_cube_ply_binary(str(b))
    mesh_a = io.load_mesh(str(a))
    mesh_b = io.load_mesh(str(b))
    np.testing.assert_allclose(mesh_a.vertices, mesh_b.vertices)
    np.testing.assert_array_equal(mesh_a.triangles, mesh_b.triangles)
    assert len(mesh_a.triangles) == 12  # quads fan-triangulated


def test_ply_matches_obj(tmp_path):
    o = tmp_path / "cube.obj"
    p = tmp_path / "cube.ply"
    write_cube_obj(str(o))
    write_cube_ply_ascii(str(p))
    np.testing.assert_allclose(io.load_mesh(str(o)).vertices, io.load_mesh(str(p)).vertices)


def test_ply_errors(tmp_path):
    big = tmp_path / "big.ply"
    big.write_text("ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(UnsupportedFormat):
        io.load_mesh(str(big))
    trunc = tmp_path / "trunc.ply"
    with open(trunc, "wb") as fh:
        fh.write(b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
                 b"property float x\nproperty float y\nproperty float z\nend_header\n")
        fh.write(struct.pack("<3f", 0, 0, 0))  # one vertex missing
    with pytest.raises(ParseError, match="truncated"):
        io.load_mesh(str(trunc))


def test_load_pointcloud_xyz(tmp_path):
    p = tmp_path / "pts.xyz"
    p.write_text("0 0 0\n1 0.5 -0.25\n# comment\n2 2 2\n")
    cloud = io.load_pointcloud(str(p))
    assert len(cloud) == 3
    np.testing.assert_allclose(cloud.points[1], [1, 0.5, -0.25])


def test_normalize_identity():
    pts = np.array([[-0.5, -0.25, 0.0], [0.5, 0.25, 0.0]])
    normalized, record = io.normalize_to_unit_cube(io.PointCloud(pts))
    assert record.scale == pytest.approx(1.0)
    np.testing.assert_allclose(record.offset, 0.0, atol=1e-15)
    np.testing.assert_allclose(normalized.points, pts)


def test_normalize_scale_and_round_trip():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-5, 5, (100, 3)) * 10
    normalized, record = io.normalize_to_unit_cube(io.PointCloud(pts))
    extent = normalized.points.max(axis=0) - normalized.points.min(axis=0)
    assert extent.max() == pytest.approx(1.0)
    np.testing.assert_allclose(record.invert(normalized.points), pts, rtol=1e-9)
    # scaled data records the reciprocal factor
    _, rec10 = io.normalize_to_unit_cube(io.PointCloud(pts * 10))
    assert rec10.scale == pytest.approx(record.scale / 10)


def test_normalization_scales_chamfer_quadratically():
    # squared-distance Chamfer is homogeneous of degree 2 under similarity
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 4, (30, 3))
    b = rng.uniform(0, 4, (25, 3))
    joint = np.vstack([a, b])
    _, record = io.normalize_to_unit_cube(io.PointCloud(joint))
    scaled = ME.chamfer_points(record.apply(a), record.apply(b))
    assert scaled == pytest.approx(ME.chamfer_points(a, b) * record.scale ** 2, rel=1e-9)


def test_ensemble_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    prims = tuple(
        G.Superquadric(
            G.ShapeParams(rng.uniform(0.01, 0.5, 3), rng.uniform(0.1, 1.9, 2)),
            G.Pose(q=rng.normal(size=4), t=rng.uniform(-1, 1, 3)),
        )
        for _ in range(3)
    )
    ens = G.Ensemble(prims, rng.uniform(0, 1, 3))
    record = io.NormalizationRecord(offset=rng.uniform(-2, 2, 3), scale=0.37)
    path = tmp_path / "ens.json"
    io.save_ensemble(str(path), ens, record)
    loaded, rec2 = io.load_ensemble(str(path))
    assert rec2.scale == record.scale
    np.testing.assert_array_equal(rec2.offset, record.offset)
    np.testing.assert_array_equal(loaded.gamma, ens.gamma)
    for a, b in zip(loaded.primitives, ens.primitives):
        np.testing.assert_array_equal(a.shape.alpha, b.shape.alpha)
        np.testing.assert_array_equal(a.shape.epsilon, b.shape.epsilon)
        np.testing.assert_array_equal(a.pose.q, b.pose.q)
        np.testing.assert_array_equal(a.pose.t, b.pose.t)


def test_ensemble_schema_errors(tmp_path):
    path = tmp_path / "ens.json"
    io.save_ensemble(str(path), sphere_ensemble(0.5))
    doc = json.loads(path.read_text())
    del doc["primitives"][0]["gamma"]
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaError):
        io.load_ensemble(str(path))

    io.save_ensemble(str(path), sphere_ensemble(0.5))
    doc = json.loads(path.read_text())
    doc["version"] = 2
    path.write_text(json.dumps(doc))
    with pytest.raises(UnsupportedVersion):
        io.load_ensemble(str(path))

    path.write_text("{not json")
    with pytest.raises(ParseError):
        io.load_ensemble(str(path))


def test_export_sphere_vertices(tmp_path):
    path = tmp_path / "sphere.obj"
    io.export_ensemble_mesh(sphere_ensemble(1.0), 32, 0.5, str(path))
    mesh = io.load_mesh(str(path))
    np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0, atol=1e-6)
    assert "o prim_0" in path.read_text()


def test_export_skips_inactive(tmp_path):
    prims = (sphere_ensemble(0.3).primitives[0], sphere_ensemble(0.5).primitives[0])
    ens = G.Ensemble(prims, [0.9, 0.2])
    path = tmp_path / "partial.obj"
    io.export_ensemble_mesh(ens, 8, 0.5, str(path))
    text = path.read_text()
    assert "o prim_0" in text and "o prim_1" not in text


def test_export_errors(tmp_path):
    with pytest.raises(ValueError):
        io.export_ensemble_mesh(sphere_ensemble(1.0), 3, 0.5, str(tmp_path / "x.obj"))
    with pytest.raises(NoActivePrimitives):
        io.export_ensemble_mesh(sphere_ensemble(1.0), 8, 1.1, str(tmp_path / "x.obj"))


def test_export_tessellation_fidelity(tmp_path):
    shape = G.ShapeParams([0.4, 0.3, 0.25], [0.6, 1.4])
    pose = G.Pose(q=[0.9, 0.1, 0.3, -0.2], t=[0.05, -0.1, 0.2])
    ens = G.Ensemble((G.Superquadric(shape, pose),), [1.0])
    path = tmp_path / "sq.obj"
    io.export_ensemble_mesh(ens, 32, 0.5, str(path))
    mesh = io.load_mesh(str(path))
    iou = ME.volumetric_iou(ens, mesh, ME.EvalConfig(iou_samples=50_000))
    assert iou >= 0.95


def test_bundled_fixtures_load():
    box = io.load_mesh(fixture_path("box.obj"))
    assert len(box.triangles) == 12
    ell = io.load_mesh(fixture_path("ellipsoid.obj"))
    assert len(ell.triangles) > 500


def test_trace_csv(tmp_path):
    trace = FitTrace()
    trace.append(TraceRecord(0, 0.5, 0.25, 1.0, 1.75, 0.5, 0))
    trace.append(TraceRecord(10, 0.1, 0.2, 0.3, 0.6, 1.25, 2))
    path = tmp_path / "trace.csv"
    io.save_trace_csv(trace, str(path))
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "iter,l_px,l_xp,l_parsimony,l_total,sum_gamma,active"
    assert len(lines) == 3
    fields = lines[2].split(",")
    assert int(fields[0]) == 10
    assert float(fields[4]) == 0.6
    assert int(fields[6]) == 2
