#!/usr/bin/env python3
"""Regenerate the bundled OBJ fixtures (committed under fixtures/)."""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from sqparse import geometry as G  # noqa: E402
from sqparse import io  # noqa: E402

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def box_mesh(ex: float, ey: float, ez: float) -> io.Mesh:
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
    return io.Mesh(v, f)


def write_box(path: str) -> None:
    mesh = box_mesh(0.8, 0.55, 0.35)
    lines = [f"v {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}" for p in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# axis-aligned box 0.8 x 0.55 x 0.35\n" + "\n".join(lines) + "\n")


def write_ellipsoid(path: str) -> None:
    shape = G.ShapeParams([0.42, 0.27, 0.16], [1.0, 1.0])
    pose = G.Pose(q=[0.8, 0.36, -0.3, 0.37], t=[0.05, -0.08, 0.12])
    ensemble = G.Ensemble((G.Superquadric(shape, pose),), [1.0])
    io.export_ensemble_mesh(ensemble, resolution=24, threshold=0.5, path=path)


def main() -> None:
    os.makedirs(FIXTURES, exist_ok=True)
    write_box(os.path.join(FIXTURES, "box.obj"))
    write_ellipsoid(os.path.join(FIXTURES, "ellipsoid.obj"))
    print(f"fixtures written to {os.path.abspath(FIXTURES)}")


if __name__ == "__main__":
    main()
