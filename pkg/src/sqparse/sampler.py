"""Near-uniform surface sampling of superquadrics and area-weighted mesh sampling.

Uniform angle stepping concentrates superquadric samples near corners for
small shape exponents, so the default mode places angles at equal quantiles
of numerically accumulated arc length: latitude rows are spread evenly
along the meridian, each row receives a point budget proportional to its
circumference, and points within a row are spread evenly along the ring.
A guard band keeps |eta| <= pi/2 - 1e-3, away from the pole singularity of
the signed-power derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import DegenerateMesh
from .io import Mesh, PointCloud

ETA_GUARD = 1e-3
_DENSE_ETA = 257
_DENSE_OMEGA = 513


@dataclass(frozen=True)
class AngleGrid:
    """Paired (eta, omega) samples, one surface point each."""

    etas: np.ndarray  # (K,) in [-pi/2, pi/2]
    omegas: np.ndarray  # (K,) in [-pi, pi]

    def __post_init__(self):
        object.__setattr__(self, "etas", np.asarray(self.etas, dtype=float).reshape(-1))
        object.__setattr__(self, "omegas", np.asarray(self.omegas, dtype=float).reshape(-1))
        if self.etas.size != self.omegas.size:
            raise ValueError("etas and omegas must pair up")

    def __len__(self) -> int:
        return len(self.etas)


@dataclass(frozen=True)
class SurfaceSamples:
    """K points on one superquadric surface, canonical frame."""

    points_local: np.ndarray  # (K, 3)
    grid: AngleGrid

    def __post_init__(self):
        object.__setattr__(self, "points_local", np.asarray(self.points_local, dtype=float).reshape(-1, 3))

    def __len__(self) -> int:
        return len(self.points_local)


def _cumulative_arc(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _allocate_row_counts(weights: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder apportionment of `total` points across rows, each >= 1."""
    weights = np.maximum(weights, 1e-12)
    raw = total * weights / weights.sum()
    counts = np.floor(raw).astype(int)
    remainder = total - counts.sum()
    if remainder > 0:
        frac = raw - np.floor(raw)
        # ties broken by lower row index
        order = np.lexsort((np.arange(len(frac)), -frac))
        counts[order[:remainder]] += 1
    while np.any(counts == 0):
        counts[int(np.argmax(counts))] -= 1
        counts[int(np.argmin(counts))] += 1
    return counts


def build_angle_grid(shape: geometry.ShapeParams, k: int, mode: str = "uniform_arc",
                     jitter_rng: np.random.Generator | None = None) -> AngleGrid:
    """Deterministic (eta, omega) grid with exactly k entries.

    uniform_arc places rows and in-row points at equal arc-length quantiles;
    uniform_angle is the naive rectangular-grid baseline.  `jitter_rng`, when
    given, randomizes the quantile offsets (fresh stochastic samples).
    """
    if k < 4:
        raise ValueError(f"need at least 4 samples, got {k}")
    if mode == "uniform_angle":
        n_eta = max(2, int(round(np.sqrt(k / 2.0))))
        n_omega = int(np.ceil(k / n_eta))
        lo, hi = -np.pi / 2 + ETA_GUARD, np.pi / 2 - ETA_GUARD
        etas = lo + (np.arange(n_eta) + 0.5) * (hi - lo) / n_eta
        omegas = -np.pi + (np.arange(n_omega) + 0.5) * 2 * np.pi / n_omega
        ee, oo = np.meshgrid(etas, omegas, indexing="ij")
        return AngleGrid(ee.ravel()[:k], oo.ravel()[:k])
    if mode != "uniform_arc":
        raise ValueError(f"unknown sampling mode {mode!r}")

    e1, e2 = shape.epsilon
    a1, a2, a3 = shape.alpha

    # Meridian profile (xy-radius, z) over the guarded eta range.
    eta_dense = np.linspace(-np.pi / 2 + ETA_GUARD, np.pi / 2 - ETA_GUARD, _DENSE_ETA)
    rho = np.cos(eta_dense) ** e1  # cos > 0 inside the guard band
    zz = geometry.signed_pow(np.sin(eta_dense), e1)
    a_xy = 0.5 * (a1 + a2)
    cum_eta = _cumulative_arc(np.column_stack([a_xy * rho, a3 * zz]))
    s_eta = cum_eta[-1]

    # Ring profile at unit latitude factor; its arc quantiles are shared by
    # every row because both x and y carry the same cos(eta)^e1 factor.
    omega_dense = np.linspace(-np.pi, np.pi, _DENSE_OMEGA)
    ring = np.column_stack([
        a1 * geometry.signed_pow(np.cos(omega_dense), e2),
        a2 * geometry.signed_pow(np.sin(omega_dense), e2),
    ])
    cum_omega = _cumulative_arc(ring)
    s_omega = cum_omega[-1]

    # Target spacing from the lateral-area estimate, then row count and
    # per-row budgets proportional to ring circumference.
    rho_mid = 0.5 * (rho[1:] + rho[:-1])
    area = s_omega * float(np.sum(rho_mid * np.diff(cum_eta)))
    spacing = np.sqrt(max(area, 1e-300) / k)
    n_eta = int(np.clip(round(s_eta / spacing), 2, max(2, k // 2)))

    if jitter_rng is None:
        eta_offsets = np.full(n_eta, 0.5)
    else:
        eta_offsets = jitter_rng.random(n_eta)
    row_etas = np.interp((np.arange(n_eta) + eta_offsets) / n_eta * s_eta, cum_eta, eta_dense)
    row_weights = np.cos(row_etas) ** e1
    counts = _allocate_row_counts(row_weights, k)

    etas = np.empty(k)
    omegas = np.empty(k)
    pos = 0
    for j, (eta_j, n_j) in enumerate(zip(row_etas, counts)):
        if jitter_rng is None:
            offs = 0.5 if j % 2 == 0 else 0.0  # brick pattern between rows
        else:
            offs = jitter_rng.random()
        targets = ((np.arange(n_j) + offs) % n_j) / n_j * s_omega
        etas[pos:pos + n_j] = eta_j
        omegas[pos:pos + n_j] = np.interp(targets, cum_omega, omega_dense)
        pos += n_j
    return AngleGrid(etas, omegas)


def sample_superquadric(shape: geometry.ShapeParams, k: int, mode: str = "uniform_arc",
                        jitter_rng: np.random.Generator | None = None) -> SurfaceSamples:
    """Exactly k surface points in the canonical frame; deterministic per (shape, k, mode)."""
    grid = build_angle_grid(shape, k, mode, jitter_rng=jitter_rng)
    return SurfaceSamples(geometry.surface_point(shape, grid.etas, grid.omegas), grid)


def triangle_areas(mesh: Mesh) -> np.ndarray:
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def sample_mesh_surface(mesh: Mesh, n: int, seed: int) -> PointCloud:
    """n points drawn area-weighted over triangles, uniform via barycentric sampling."""
    if len(mesh.triangles) < 1:
        raise DegenerateMesh("mesh has no triangles")
    areas = triangle_areas(mesh)
    total = areas.sum()
    if total <= 0:
        raise DegenerateMesh("mesh has zero total surface area")
    rng = np.random.default_rng(seed)
    tri_idx = np.searchsorted(np.cumsum(areas) / total, rng.random(n), side="right")
    tri_idx = np.minimum(tri_idx, len(areas) - 1)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1
    u[flip] = 1 - u[flip]
    v[flip] = 1 - v[flip]
    a = mesh.vertices[mesh.triangles[tri_idx, 0]]
    b = mesh.vertices[mesh.triangles[tri_idx, 1]]
    c = mesh.vertices[mesh.triangles[tri_idx, 2]]
    return PointCloud(a + u[:, None] * (b - a) + v[:, None] * (c - a))
