"""Mesh/point-cloud loading, unit normalization, ensemble JSON, OBJ export, trace CSV.

Supported inputs: ASCII OBJ (v/f records, polygon faces fan-triangulated)
and PLY (ascii or binary_little_endian, vertex x/y/z plus optional face
vertex_indices).  Ensembles persist as a versioned JSON document; fitted
primitives export as one OBJ object per primitive.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import (
    NoActivePrimitives,
    ParseError,
    SchemaError,
    UnsupportedFormat,
    UnsupportedVersion,
)

ENSEMBLE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (V, 3) float
    triangles: np.ndarray  # (T, 3) int, indices into vertices

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ParseError(f"triangle index out of range (V={len(v)})")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3) finite
    normals: np.ndarray | None = None  # stored if present, unused by losses

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(p) < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.all(np.isfinite(p)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", p)
        if self.normals is not None:
            object.__setattr__(self, "normals", np.asarray(self.normals, dtype=float).reshape(-1, 3))

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class NormalizationRecord:
    """Similarity applied at ingestion: p' = (p - offset) * scale."""

    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))
        object.__setattr__(self, "scale", float(self.scale))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.offset) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) / self.scale + self.offset


def normalize_to_unit_cube(data):
    """Translate the centroid to the origin and scale the max extent to 1.

    Accepts a Mesh or PointCloud and returns (normalized data, record).
    """
    if isinstance(data, Mesh):
        pts = data.vertices
    elif isinstance(data, PointCloud):
        pts = data.points
    else:
        pts = np.asarray(data, dtype=float).reshape(-1, 3)
    centroid = pts.mean(axis=0)
    extent = float((pts.max(axis=0) - pts.min(axis=0)).max())
    scale = 1.0 / extent if extent > 0 else 1.0
    record = NormalizationRecord(offset=centroid, scale=scale)
    if isinstance(data, Mesh):
        return Mesh(record.apply(data.vertices), data.triangles), record
    if isinstance(data, PointCloud):
        return PointCloud(record.apply(data.points), data.normals), record
    return record.apply(pts), record


# ---------------------------------------------------------------------------
# Mesh parsing


def load_mesh(path: str) -> Mesh:
    """Parse an OBJ or PLY file into a triangle mesh."""
    lower = str(path).lower()
    if lower.endswith(".obj"):
        return _load_obj(path)
    if lower.endswith(".ply"):
        return _load_ply(path)
    raise UnsupportedFormat(f"{path}: only .obj and .ply are supported")


def _fan_triangulate(face: list[int]) -> list[tuple[int, int, int]]:
    return [(face[0], face[i], face[i + 1]) for i in range(1, len(face) - 1)]


def _load_obj(path: str) -> Mesh:
    vertices: list[list[float]] = []
    triangles: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: vertex record needs 3 coordinates")
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: bad vertex coordinate: {exc}") from None
            elif tag == "f":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: face record needs at least 3 vertices")
                face = []
                for token in parts[1:]:
                    idx_str = token.split("/")[0]
                    try:
                        idx = int(idx_str)
                    except ValueError:
                        raise ParseError(f"{path}:{lineno}: bad face index {token!r}") from None
                    if idx < 0:
                        idx = len(vertices) + idx  # relative indexing
                    else:
                        idx -= 1  # OBJ is 1-based
                    if idx < 0 or idx >= len(vertices):
                        raise ParseError(f"{path}:{lineno}: face index {token!r} out of range")
                    face.append(idx)
                triangles.extend(_fan_triangulate(face))
            # other records (vn, vt, o, g, s, usemtl, ...) are ignored
    return Mesh(np.array(vertices, dtype=float).reshape(-1, 3), np.array(triangles, dtype=np.int64).reshape(-1, 3))


_PLY_SCALAR = {
    "char": ("b", 1), "int8": ("b", 1),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "short": ("h", 2), "int16": ("h", 2),
    "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
}


def _load_ply(path: str) -> Mesh:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"ply"):
        raise ParseError(f"{path}:1: missing 'ply' magic")

    # Header is ASCII up to 'end_header'.
    end = blob.find(b"end_header")
    if end < 0:
        raise ParseError(f"{path}: header has no end_header")
    header_bytes = blob[:end]
    body = blob[end:]
    body = body[body.find(b"\n") + 1:]

    fmt = None
    elements: list[dict] = []  # [{name, count, properties: [(kind, name, ...)]}]
    for lineno, raw in enumerate(header_bytes.decode("ascii", errors="replace").splitlines(), start=1):
        parts = raw.strip().split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise UnsupportedFormat(f"{path}:{lineno}: unsupported PLY format {parts[1:2]}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: malformed element line")
            elements.append({"name": parts[1], "count": int(parts[2]), "properties": []})
        elif parts[0] == "property":
            if not elements:
                raise ParseError(f"{path}:{lineno}: property before any element")
            if parts[1] == "list":
                if len(parts) != 5:
                    raise ParseError(f"{path}:{lineno}: malformed list property")
                elements[-1]["properties"].append(("list", parts[4], parts[2], parts[3]))
            else:
                if len(parts) != 3:
                    raise ParseError(f"{path}:{lineno}: malformed property")
                elements[-1]["properties"].append(("scalar", parts[2], parts[1]))
    if fmt is None:
        raise ParseError(f"{path}: header missing format line")

    if fmt == "ascii":
        rows = body.decode("ascii", errors="replace").split()
        cursor = [0]

        def next_token():
            if cursor[0] >= len(rows):
                raise ParseError(f"{path}: unexpected end of ASCII body")
            tok = rows[cursor[0]]
            cursor[0] += 1
            return tok

    vertices = None
    normals = None
    faces: list[list[int]] = []
    offset = 0
    for element in elements:
        names = [p[1] for p in element["properties"]]
        is_vertex = element["name"] == "vertex"
        is_face = element["name"] == "face"
        if is_vertex:
            vertices = np.zeros((element["count"], 3))
            if {"nx", "ny", "nz"} <= set(names):
                normals = np.zeros((element["count"], 3))
        for i in range(element["count"]):
            values = {}
            for prop in element["properties"]:
                if prop[0] == "scalar":
                    _, name, typ = prop
                    if typ not in _PLY_SCALAR:
                        raise UnsupportedFormat(f"{path}: PLY scalar type {typ!r}")
                    if fmt == "ascii":
                        values[name] = float(next_token())
                    else:
                        code, size = _PLY_SCALAR[typ]
                        if offset + size > len(body):
                            raise ParseError(f"{path}: body truncated at offset {offset}")
                        values[name] = struct.unpack_from("<" + code, body, offset)[0]
                        offset += size
                else:
                    _, name, count_typ, item_typ = prop
                    if count_typ not in _PLY_SCALAR or item_typ not in _PLY_SCALAR:
                        raise UnsupportedFormat(f"{path}: PLY list types {count_typ!r}/{item_typ!r}")
                    if fmt == "ascii":
                        n = int(float(next_token()))
                        values[name] = [int(float(next_token())) for _ in range(n)]
                    else:
                        ccode, csize = _PLY_SCALAR[count_typ]
                        icode, isize = _PLY_SCALAR[item_typ]
                        n = int(struct.unpack_from("<" + ccode, body, offset)[0])
                        offset += csize
                        if offset + n * isize > len(body):
                            raise ParseError(f"{path}: body truncated at offset {offset}")
                        values[name] = list(struct.unpack_from("<" + str(n) + icode, body, offset))
                        offset += n * isize
            if is_vertex:
                try:
                    vertices[i] = (values["x"], values["y"], values["z"])
                except KeyError:
                    raise ParseError(f"{path}: vertex element lacks x/y/z properties") from None
                if normals is not None:
                    normals[i] = (values["nx"], values["ny"], values["nz"])
            elif is_face:
                idx = values.get("vertex_indices", values.get("vertex_index"))
                if idx is None:
                    raise ParseError(f"{path}: face element lacks vertex_indices")
                faces.append([int(j) for j in idx])
    if vertices is None:
        raise ParseError(f"{path}: no vertex element")
    triangles: list[tuple[int, int, int]] = []
    for face in faces:
        for idx in face:
            if idx < 0 or idx >= len(vertices):
                raise ParseError(f"{path}: face index {idx} out of range")
        triangles.extend(_fan_triangulate(face))
    return Mesh(vertices, np.array(triangles, dtype=np.int64).reshape(-1, 3))


def load_pointcloud(path: str) -> PointCloud:
    """Load a point cloud: .xyz text, or the vertices of any loadable mesh file."""
    lower = str(path).lower()
    if lower.endswith(".xyz"):
        rows = []
        normals = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) not in (3, 6):
                    raise ParseError(f"{path}:{lineno}: expected 3 or 6 columns")
                try:
                    vals = [float(v) for v in parts]
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from None
                rows.append(vals[:3])
                if len(vals) == 6:
                    normals.append(vals[3:])
        if not rows:
            raise ParseError(f"{path}: empty point cloud")
        return PointCloud(np.array(rows), np.array(normals) if len(normals) == len(rows) else None)
    mesh = load_mesh(path)
    return PointCloud(mesh.vertices)


# ---------------------------------------------------------------------------
# Ensemble JSON


def save_ensemble(path: str, ensemble: geometry.Ensemble, record: NormalizationRecord | None = None) -> None:
    """Write the ensemble (plus its normalization record) as versioned JSON."""
    if record is None:
        record = NormalizationRecord()
    doc = {
        "version": ENSEMBLE_SCHEMA_VERSION,
        "normalization": {"offset": list(record.offset), "scale": record.scale},
        "primitives": [
            {
                "alpha": list(prim.shape.alpha),
                "epsilon": list(prim.shape.epsilon),
                "quaternion": list(prim.pose.q),
                "translation": list(prim.pose.t),
                "gamma": float(g),
            }
            for prim, g in zip(ensemble.primitives, ensemble.gamma)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_ensemble(path: str) -> tuple[geometry.Ensemble, NormalizationRecord]:
    """Read an ensemble JSON document; full-precision round trip of save_ensemble."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None
    if not isinstance(doc, dict) or "version" not in doc:
        raise SchemaError(f"{path}: missing version field")
    if doc["version"] != ENSEMBLE_SCHEMA_VERSION:
        raise UnsupportedVersion(f"{path}: version {doc['version']!r} not supported")
    try:
        norm = doc["normalization"]
        record = NormalizationRecord(offset=np.array(norm["offset"], dtype=float), scale=float(norm["scale"]))
        prims = []
        gammas = []
        for entry in doc["primitives"]:
            prims.append(
                geometry.Superquadric(
                    shape=geometry.ShapeParams(np.array(entry["alpha"], dtype=float), np.array(entry["epsilon"], dtype=float)),
                    pose=geometry.Pose(q=np.array(entry["quaternion"], dtype=float), t=np.array(entry["translation"], dtype=float)),
                )
            )
            gammas.append(float(entry["gamma"]))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: malformed ensemble document ({exc!r})") from None
    return geometry.Ensemble(tuple(prims), np.array(gammas)), record


def apply_normalization_to_ensemble(ensemble: geometry.Ensemble, record: NormalizationRecord) -> geometry.Ensemble:
    """Re-express an ensemble in the normalized frame p' = (p - offset) * scale.

    Under the similarity, a primitive's local map becomes
    T'(x') = R x' + s (R c + t) with axis scales s * alpha.
    """
    s = record.scale
    prims = []
    for prim in ensemble.primitives:
        r = geometry.quat_to_rotmat(prim.pose.q)
        t_new = s * (r @ record.offset + prim.pose.t)
        prims.append(
            geometry.Superquadric(
                shape=geometry.ShapeParams(prim.shape.alpha * s, prim.shape.epsilon),
                pose=geometry.Pose(q=prim.pose.q, t=t_new),
            )
        )
    return geometry.Ensemble(tuple(prims), ensemble.gamma)


# ---------------------------------------------------------------------------
# OBJ export of fitted primitives


def export_ensemble_mesh(ensemble: geometry.Ensemble, resolution: int, threshold: float, path: str) -> int:
    """Tessellate active primitives to a world-frame OBJ; returns #primitives written.

    Each active primitive becomes a resolution x resolution band/sector grid
    of quads, fan-triangulated, written as one OBJ object named prim_<m>.
    """
    if resolution < 4:
        raise ValueError(f"resolution must be >= 4, got {resolution}")
    active = [m for m, g in enumerate(ensemble.gamma) if g >= threshold]
    if not active:
        raise NoActivePrimitives(f"no primitive with gamma >= {threshold}")

    etas = np.linspace(-np.pi / 2, np.pi / 2, resolution + 1)
    omegas = -np.pi + 2 * np.pi * np.arange(resolution) / resolution
    lines: list[str] = []
    base = 0
    for m in active:
        prim = ensemble.primitives[m]
        grid_eta, grid_omega = np.meshgrid(etas, omegas, indexing="ij")
        local = geometry.surface_point(prim.shape, grid_eta, grid_omega).reshape(-1, 3)
        world = geometry.local_to_world(prim.pose, local)
        lines.append(f"o prim_{m}")
        for p in world:
            lines.append(f"v {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")

        def vid(j, l):
            return base + j * resolution + (l % resolution) + 1

        for j in range(resolution):
            for l in range(resolution):
                a, b = vid(j, l), vid(j, l + 1)
                c, d = vid(j + 1, l + 1), vid(j + 1, l)
                # skip the triangle collapsed at each pole (pole-row vertices coincide)
                if j != 0:
                    lines.append(f"f {a} {b} {c}")
                if j != resolution - 1:
                    lines.append(f"f {a} {c} {d}")
        base += (resolution + 1) * resolution
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return len(active)


# ---------------------------------------------------------------------------
# Trace CSV

TRACE_HEADER = "iter,l_px,l_xp,l_parsimony,l_total,sum_gamma,active"


def save_trace_csv(trace, path: str) -> None:
    """One row per recorded iteration; numeric fields in shortest round-trip form."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRACE_HEADER + "\n")
        for rec in trace.records:
            fh.write(
                f"{rec.iteration},{rec.l_px!r},{rec.l_xp!r},{rec.l_parsimony!r},"
                f"{rec.l_total!r},{rec.sum_gamma!r},{rec.active}\n"
            )
