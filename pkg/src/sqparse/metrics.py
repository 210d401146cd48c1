"""Evaluation metrics: mean Chamfer distance and Monte-Carlo volumetric IoU.

The Chamfer metric follows the squared-distance convention common for
point-set reconstruction benchmarks: mean squared nearest-neighbor
distance from prediction to target plus the same from target to
prediction.  Volumetric IoU draws uniform samples from a joint bounding
box and classifies them with the superquadric inside-outside function or
a ray-parity point-in-mesh test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import geometry, sampler
from .errors import NoActivePrimitives, OpenMesh
from .io import Mesh, PointCloud


@dataclass
class EvalConfig:
    gamma_threshold: float = 0.5
    iou_samples: int = 100_000
    eval_k: int = 1000  # surface samples per active primitive
    eval_n: int = 10_000  # target samples when the target is a mesh
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.gamma_threshold < 1):
            raise ValueError("gamma threshold must lie strictly between 0 and 1")
        if self.iou_samples < 1 or self.eval_k < 4 or self.eval_n < 1:
            raise ValueError("sample counts must be positive")


def active_primitives(ensemble: geometry.Ensemble, threshold: float = 0.5) -> list[int]:
    """Indices with gamma >= threshold (deterministic stand-in for sampling)."""
    return [m for m, g in enumerate(ensemble.gamma) if g >= threshold]


def sample_existence(gamma, seed: int) -> np.ndarray:
    """Independent Bernoulli draws of the existence variables."""
    gamma = np.asarray(gamma, dtype=float)
    return np.random.default_rng(seed).random(gamma.shape) < gamma


def ensemble_surface_points(ensemble: geometry.Ensemble, per_prim: int,
                            threshold: float = 0.5, mode: str = "uniform_arc") -> np.ndarray:
    """World-frame surface samples of all active primitives, concatenated."""
    active = active_primitives(ensemble, threshold)
    if not active:
        raise NoActivePrimitives(f"no primitive with gamma >= {threshold}")
    chunks = []
    for m in active:
        prim = ensemble.primitives[m]
        local = sampler.sample_superquadric(prim.shape, per_prim, mode).points_local
        chunks.append(geometry.local_to_world(prim.pose, local))
    return np.concatenate(chunks, axis=0)


def chamfer_points(pred: np.ndarray, target: np.ndarray) -> float:
    """Symmetric Chamfer between two point sets (mean squared NN, both ways)."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    target = np.asarray(target, dtype=float).reshape(-1, 3)
    d_pt = cKDTree(target).query(pred, k=1)[0]
    d_tp = cKDTree(pred).query(target, k=1)[0]
    return float(np.mean(d_pt ** 2) + np.mean(d_tp ** 2))


def chamfer_eval(ensemble: geometry.Ensemble, target: PointCloud, cfg: EvalConfig | None = None) -> float:
    """Chamfer between the active primitives' surfaces and the target cloud."""
    cfg = cfg or EvalConfig()
    pred = ensemble_surface_points(ensemble, cfg.eval_k, cfg.gamma_threshold)
    return chamfer_points(pred, target.points)


def _ensemble_bounds(ensemble: geometry.Ensemble, active: list[int]) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for m in active:
        prim = ensemble.primitives[m]
        center = geometry.local_to_world(prim.pose, np.zeros(3))
        radius = float(np.linalg.norm(prim.shape.alpha))
        lo = np.minimum(lo, center - radius)
        hi = np.maximum(hi, center + radius)
    return lo, hi


def ensemble_contains(ensemble: geometry.Ensemble, points: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Union containment: inside iff the inside-outside value of any active primitive is <= 1."""
    active = active_primitives(ensemble, threshold)
    if not active:
        raise NoActivePrimitives(f"no primitive with gamma >= {threshold}")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    inside = np.zeros(len(points), dtype=bool)
    for m in active:
        prim = ensemble.primitives[m]
        local = geometry.world_to_local(prim.pose, points)
        inside |= geometry.implicit_value(prim.shape, local) <= 1.0
    return inside


# Fixed, axis-skewed ray directions for parity tests; jitter retries rotate
# away from degenerate grazing hits.
_RAY_DIRECTIONS = (
    np.array([0.57403921, 0.33461425, 0.74742331]),
    np.array([-0.28733640, 0.84523652, 0.45088997]),
    np.array([0.66393185, -0.52830521, 0.52931480]),
)


def _parity_pass(mesh: Mesh, points: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Crossing parity along direction d for every point; also flags grazing hits.

    Triangles are bucketed by their footprint on the plane orthogonal to d,
    so each query point only tests the triangles sharing its grid cell.
    """
    band = 1e-9
    # orthonormal basis of the projection plane
    aux = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, aux)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)

    tri = mesh.triangles
    a3 = mesh.vertices[tri[:, 0]]
    n = np.cross(mesh.vertices[tri[:, 1]] - a3, mesh.vertices[tri[:, 2]] - a3)  # (T, 3)
    dn = n @ d
    plane = np.column_stack([e1, e2])  # (3, 2)
    pa = a3 @ plane
    pb = mesh.vertices[tri[:, 1]] @ plane
    pc = mesh.vertices[tri[:, 2]] @ plane
    eb = pb - pa
    ec = pc - pa
    det2 = eb[:, 0] * ec[:, 1] - eb[:, 1] * ec[:, 0]
    usable = (np.abs(det2) > 1e-18) & (np.abs(dn) > 1e-18)  # rays parallel to a face never cross it

    lo = np.minimum(np.minimum(pa, pb), pc).min(axis=0)
    hi = np.maximum(np.maximum(pa, pb), pc).max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    res = int(np.clip(np.sqrt(len(tri)), 4, 256))
    cell = span / res

    tmin = np.minimum(np.minimum(pa, pb), pc)
    tmax = np.maximum(np.maximum(pa, pb), pc)
    cmin = np.clip(np.floor((tmin - lo - band) / cell).astype(int), 0, res - 1)
    cmax = np.clip(np.floor((tmax - lo + band) / cell).astype(int), 0, res - 1)
    buckets: list[list[int]] = [[] for _ in range(res * res)]
    for t_idx in np.nonzero(usable)[0]:
        for cx in range(cmin[t_idx, 0], cmax[t_idx, 0] + 1):
            base = cx * res
            for cy in range(cmin[t_idx, 1], cmax[t_idx, 1] + 1):
                buckets[base + cy].append(t_idx)

    points2 = points @ plane
    parity = np.zeros(len(points), dtype=np.int64)
    grazing = np.zeros(len(points), dtype=bool)
    cells = np.floor((points2 - lo) / cell).astype(int)
    inside_box = (cells[:, 0] >= 0) & (cells[:, 0] < res) & (cells[:, 1] >= 0) & (cells[:, 1] < res)
    cell_ids = np.where(inside_box, cells[:, 0] * res + cells[:, 1], -1)
    order = np.argsort(cell_ids, kind="stable")
    sorted_ids = cell_ids[order]
    boundaries = np.flatnonzero(np.diff(sorted_ids)) + 1
    groups = np.split(order, boundaries)
    for group in groups:
        cid = cell_ids[group[0]]
        if cid < 0 or not buckets[cid]:
            continue
        cand = np.array(buckets[cid], dtype=int)
        p2 = points2[group]  # (P, 2)
        w = p2[:, None, :] - pa[None, cand, :]  # (P, C, 2)
        inv = 1.0 / det2[cand]
        u = (w[:, :, 0] * ec[cand, 1] - w[:, :, 1] * ec[cand, 0]) * inv[None, :]
        v = (eb[cand, 0] * w[:, :, 1] - eb[cand, 1] * w[:, :, 0]) * inv[None, :]
        # signed ray parameter: t = (a3 - p) . n / (d . n)
        t_num = (a3[cand] * n[cand]).sum(axis=1)[None, :] - points[group] @ n[cand].T
        t_hit = t_num / dn[cand][None, :]
        hits = (u >= band) & (v >= band) & (u + v <= 1 - band) & (t_hit > band)
        near = (
            (t_hit > -band) & (u > -band) & (v > -band) & (u + v < 1 + band)
            & ((u < band) | (v < band) | (u + v > 1 - band) | (t_hit < band))
        )
        parity[group] = hits.sum(axis=1) % 2
        grazing[group] = near.any(axis=1)
    return parity == 1, grazing


def _ray_parity(mesh: Mesh, points: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Crossing parity per point along one direction, with jitter retries.

    Raises OpenMesh when a grazing (edge/vertex) hit survives every retry.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    parity = np.zeros(len(points), dtype=bool)
    todo = np.arange(len(points))
    d = direction / np.linalg.norm(direction)
    for attempt in range(8):
        par, grazing = _parity_pass(mesh, points[todo], d)
        parity[todo[~grazing]] = par[~grazing]
        todo = todo[grazing]
        if len(todo) == 0:
            return parity
        # deterministic jitter: tilt the ray slightly and retry the leftovers
        d = d + (1e-4 * (attempt + 1)) * _RAY_DIRECTIONS[(attempt + 1) % 3]
        d = d / np.linalg.norm(d)
    raise OpenMesh(f"{len(todo)} query rays kept hitting edges/vertices after jitter retries")


def points_in_mesh(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """Batch containment; parities along 3 directions must agree, else OpenMesh."""
    results = [_ray_parity(mesh, points, d) for d in _RAY_DIRECTIONS]
    if not (np.array_equal(results[0], results[1]) and np.array_equal(results[0], results[2])):
        raise OpenMesh("crossing parity disagrees across ray directions; mesh is not watertight")
    return results[0]


def point_in_mesh(mesh: Mesh, p) -> bool:
    return bool(points_in_mesh(mesh, np.asarray(p, dtype=float).reshape(1, 3))[0])


def volumetric_iou(ensemble: geometry.Ensemble, truth, cfg: EvalConfig | None = None) -> float:
    """Monte-Carlo IoU over a shared inflated bounding box; `truth` is a Mesh or Ensemble."""
    cfg = cfg or EvalConfig()
    active = active_primitives(ensemble, cfg.gamma_threshold)
    if not active:
        raise NoActivePrimitives(f"no primitive with gamma >= {cfg.gamma_threshold}")
    lo_a, hi_a = _ensemble_bounds(ensemble, active)
    if isinstance(truth, Mesh):
        lo_b = truth.vertices.min(axis=0)
        hi_b = truth.vertices.max(axis=0)
    else:
        truth_active = active_primitives(truth, cfg.gamma_threshold)
        if not truth_active:
            raise NoActivePrimitives("truth ensemble has no active primitive")
        lo_b, hi_b = _ensemble_bounds(truth, truth_active)
    lo = np.minimum(lo_a, lo_b)
    hi = np.maximum(hi_a, hi_b)
    center = 0.5 * (lo + hi)
    half = 0.525 * (hi - lo)  # 5% inflation
    rng = np.random.default_rng(cfg.seed)
    pts = center + (2.0 * rng.random((cfg.iou_samples, 3)) - 1.0) * half

    in_pred = ensemble_contains(ensemble, pts, cfg.gamma_threshold)
    if isinstance(truth, Mesh):
        in_truth = points_in_mesh(truth, pts)
    else:
        in_truth = ensemble_contains(truth, pts, cfg.gamma_threshold)
    union = np.count_nonzero(in_pred | in_truth)
    if union == 0:
        return 0.0
    return float(np.count_nonzero(in_pred & in_truth) / union)
