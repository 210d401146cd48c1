"""Gradients of the total loss wrt all unconstrained parameters.

The forward pass is re-expressed on torch double tensors and differentiated
in reverse mode; a central finite-difference oracle runs the identical
forward.  Non-smooth points follow fixed subgradient conventions: min and
sort ties route to the lowest primitive index, the parsimony hinge takes
the zero-slope side at equality, and the signed power takes derivative 0
at base 0.

The unconstrained vector packs 13 numbers per primitive:
3 size + 2 shape + 3 translation + 4 quaternion + 1 existence logit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import geometry, sampler
from .errors import NonFiniteLoss, ZeroQuaternion
from .io import PointCloud
from .loss import LossConfig

PARAMS_PER_PRIMITIVE = 13
_FIELDS = (("size", 3), ("shape", 2), ("translation", 3), ("quaternion", 4), ("gamma", 1))


@dataclass(frozen=True)
class ParamLayout:
    """Slice map of the flat unconstrained vector, plus the size-bound reparam range."""

    n_primitives: int
    alpha_min: float = 0.005
    alpha_max: float = 0.5

    @property
    def size(self) -> int:
        return PARAMS_PER_PRIMITIVE * self.n_primitives

    def block(self, m: int) -> slice:
        return slice(PARAMS_PER_PRIMITIVE * m, PARAMS_PER_PRIMITIVE * (m + 1))

    def field_slice(self, m: int, name: str) -> slice:
        offset = PARAMS_PER_PRIMITIVE * m
        for fname, width in _FIELDS:
            if fname == name:
                return slice(offset, offset + width)
            offset += width
        raise KeyError(name)

    def coordinate_name(self, flat_index: int) -> str:
        m, rest = divmod(int(flat_index), PARAMS_PER_PRIMITIVE)
        for fname, width in _FIELDS:
            if rest < width:
                return f"prim[{m}].{fname}[{rest}]"
            rest -= width
        raise IndexError(flat_index)


@dataclass
class ParamVector:
    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != self.layout.size:
            raise ValueError(f"expected {self.layout.size} values, got {self.values.size}")

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)


@dataclass
class SamplerSettings:
    """Surface-sampling choices for one loss evaluation.

    When `grids` is set those angle grids are used verbatim (the frozen-grid
    mode required for well-defined derivatives); otherwise grids are rebuilt
    deterministically from the current shape parameters.
    """

    k: int = 200
    mode: str = "uniform_arc"
    grids: list[sampler.AngleGrid] | None = None


@dataclass
class GradReport:
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_err: float
    worst_index: str
    stable: np.ndarray  # per-coordinate: no branch switch within +/- 10h


def _check_quaternions(u: ParamVector) -> None:
    for m in range(u.layout.n_primitives):
        q = u.values[u.layout.field_slice(m, "quaternion")]
        if np.linalg.norm(q) < 1e-12:
            raise ZeroQuaternion(f"primitive {m}: quaternion logits are (near) zero")


def build_grids(u: ParamVector, settings: SamplerSettings) -> list[sampler.AngleGrid]:
    """Angle grids for every primitive from the current (detached) shapes."""
    if settings.grids is not None:
        return settings.grids
    from .fit import reparam_forward  # late import, fit depends on this module

    ensemble = reparam_forward(u)
    return [sampler.build_angle_grid(p.shape, settings.k, settings.mode) for p in ensemble.primitives]


class _EvalContext:
    """Constant tensors for one loss evaluation: cloud plus per-primitive trig tables."""

    def __init__(self, cloud: np.ndarray, grids: list[sampler.AngleGrid]):
        self.cloud_np = np.ascontiguousarray(cloud)
        self.cloud_t = torch.from_numpy(self.cloud_np)
        with np.errstate(over="ignore"):
            self.cloud32 = self.cloud_np.astype(np.float32)
        self.tables_np = []
        self.tables_t = []
        for grid in grids:
            ce, se = geometry._snapped_trig(grid.etas)
            co, so = geometry._snapped_trig(grid.omegas)
            table = (ce, se, co, so)
            self.tables_np.append(table)
            self.tables_t.append(tuple(torch.from_numpy(np.ascontiguousarray(v)) for v in table))


def _spow(base: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """Signed power of a constant base with differentiable exponent; 0^p = 0."""
    nonzero = base != 0
    safe = torch.where(nonzero, base.abs(), torch.ones_like(base))
    return torch.where(nonzero, base.sign() * safe ** p, torch.zeros_like(base))


def _rotmat(q: torch.Tensor) -> torch.Tensor:
    w, x, y, z = q[0], q[1], q[2], q[3]
    return torch.stack([
        torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)]),
        torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)]),
        torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]),
    ])


@dataclass
class ForwardResult:
    total: torch.Tensor
    l_px: torch.Tensor
    l_xp: torch.Tensor
    l_parsimony: torch.Tensor
    per_prim_px: torch.Tensor
    sum_gamma: torch.Tensor
    structure: tuple[np.ndarray, ...]  # argmin/sort indices and hinge state


def _sigmoid_np(x):
    return 1.0 / (1.0 + np.exp(-x))


def _select_pairs(u_np: np.ndarray, layout: ParamLayout, m: int, ctx: _EvalContext
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor assignment for primitive m, computed outside the tape.

    Only the winning indices matter for the loss value; routing gradients
    through the selected pairs is exactly the subgradient convention (ties
    fall to the lowest index via argmin).  Selection runs in float32 with the
    squared-distance terms folded into one matrix product.
    """
    block = u_np[layout.block(m)]
    a = layout.alpha_min + (layout.alpha_max - layout.alpha_min) * _sigmoid_np(block[0:3])
    e = 0.1 + 1.8 * _sigmoid_np(block[3:5])
    q = block[8:12]
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ], dtype=np.float32)
    with np.errstate(over="ignore", invalid="ignore"):  # divergent inputs surface as NonFiniteLoss
        local_cloud = ctx.cloud32 @ rot.T + block[5:8].astype(np.float32)  # (N, 3)
        ce_b, se_b, co_b, so_b = ctx.tables_np[m]
        ce = geometry.signed_pow(ce_b, e[0])
        se = geometry.signed_pow(se_b, e[0])
        co = geometry.signed_pow(co_b, e[1])
        so = geometry.signed_pow(so_b, e[1])
        surf = np.stack([a[0] * ce * co, a[1] * ce * so, a[2] * se], axis=-1).astype(np.float32)

        # d2[i, k] = |x_i|^2 - 2 x_i . y_k + |y_k|^2 as a single (N,5)x(5,K) product
        n, k = len(local_cloud), len(surf)
        left = np.empty((n, 5), dtype=np.float32)
        left[:, 0:3] = local_cloud
        left[:, 3] = (local_cloud * local_cloud).sum(axis=1)
        left[:, 4] = 1.0
        right = np.empty((5, k), dtype=np.float32)
        right[0:3] = -2.0 * surf.T
        right[3] = 1.0
        right[4] = (surf * surf).sum(axis=1)
        d2 = left @ right
    return d2.argmin(axis=0), d2.argmin(axis=1)  # (K,) cloud index, (N,) sample index


def _pair_distances(points_a: torch.Tensor, points_b: torch.Tensor) -> torch.Tensor:
    """Row-wise Euclidean distances, safe to differentiate at coincidence."""
    diff = points_a - points_b
    return torch.sqrt((diff * diff).sum(dim=1).clamp(min=1e-30))


def forward_loss(u_values: torch.Tensor, layout: ParamLayout, ctx: _EvalContext,
                 cfg: LossConfig) -> ForwardResult:
    """Differentiable total loss; `u_values` is the flat (13M,) tensor.

    The quadratic-size distance matrix lives only in the detached selection
    pass; the tape sees one distance per cloud point and per surface sample.
    """
    u_np = u_values.detach().numpy()
    n_points = ctx.cloud_np.shape[0]
    gammas = []
    px_means = []
    di_rows = []
    dk_argmins = []
    di_argmins = []
    for m in range(layout.n_primitives):
        idx_for_k, idx_for_i = _select_pairs(u_np, layout, m, ctx)
        block = u_values[layout.block(m)]
        a = layout.alpha_min + (layout.alpha_max - layout.alpha_min) * torch.sigmoid(block[0:3])
        e = 0.1 + 1.8 * torch.sigmoid(block[3:5])
        t = block[5:8]
        q = block[8:12]
        q = q / torch.linalg.vector_norm(q)
        gammas.append(torch.sigmoid(block[12]))

        rot = _rotmat(q)
        local_cloud = ctx.cloud_t @ rot.T + t  # (N, 3)

        ce_b, se_b, co_b, so_b = ctx.tables_t[m]
        ce = _spow(ce_b, e[0])
        se = _spow(se_b, e[0])
        co = _spow(co_b, e[1])
        so = _spow(so_b, e[1])
        surf = torch.stack([a[0] * ce * co, a[1] * ce * so, a[2] * se], dim=-1)  # (K, 3)

        n_k = surf.shape[0]
        paired_cloud = torch.cat([local_cloud[torch.from_numpy(idx_for_k)], local_cloud])
        paired_surf = torch.cat([surf, surf[torch.from_numpy(idx_for_i)]])
        dists = _pair_distances(paired_cloud, paired_surf)  # (K + N,)
        px_means.append(dists[:n_k].mean())
        di_rows.append(dists[n_k:])
        dk_argmins.append(idx_for_k)
        di_argmins.append(idx_for_i)

    gamma = torch.stack(gammas)
    per_prim_px = torch.stack(px_means)
    l_px = (gamma * per_prim_px).sum()

    d_ci = torch.stack(di_rows)  # (M, N)
    order_np = np.argsort(d_ci.detach().numpy(), axis=0, kind="stable")
    order = torch.from_numpy(order_np)
    d_sorted = d_ci.gather(0, order)
    g_sorted = gamma[order]
    survive = torch.cumprod(1.0 - g_sorted, dim=0)
    exclusive = torch.cat([torch.ones((1, n_points), dtype=d_sorted.dtype), survive[:-1]], dim=0)
    per_point = (d_sorted * g_sorted * exclusive).sum(dim=0)
    l_xp = per_point.mean() if cfg.normalize_by_counts else per_point.sum()

    s = gamma.sum()
    hinge = torch.relu(cfg.alpha - cfg.alpha * s)
    s_positive = s > 0
    root = torch.where(s_positive, torch.sqrt(torch.where(s_positive, s, torch.ones_like(s))),
                       torch.zeros_like(s))
    l_parsimony = hinge + cfg.beta * root

    total = cfg.w_px * l_px + cfg.w_xp * l_xp + l_parsimony
    structure = (np.stack(dk_argmins), np.stack(di_argmins), order_np,
                 np.array([float(s.detach()) < 1.0, bool(s_positive)]))
    return ForwardResult(total=total, l_px=l_px, l_xp=l_xp, l_parsimony=l_parsimony,
                         per_prim_px=per_prim_px, sum_gamma=s, structure=structure)


def _prepare(u: ParamVector, cloud: PointCloud, settings: SamplerSettings | None) -> _EvalContext:
    settings = settings or SamplerSettings()
    _check_quaternions(u)
    return _EvalContext(cloud.points, build_grids(u, settings))


def loss_value_and_gradient(u: ParamVector, cloud: PointCloud, cfg: LossConfig | None = None,
                            settings: SamplerSettings | None = None) -> tuple[dict, np.ndarray]:
    """One forward/backward pass; returns loss pieces as floats plus the gradient."""
    cfg = cfg or LossConfig()
    ctx = _prepare(u, cloud, settings)
    u_t = torch.from_numpy(u.values.copy()).requires_grad_(True)
    result = forward_loss(u_t, u.layout, ctx, cfg)
    total = float(result.total.detach())
    if not np.isfinite(total):
        raise NonFiniteLoss(f"total loss is {total}")
    result.total.backward()
    grad = u_t.grad.numpy().copy()
    l_px = float(result.l_px.detach())
    l_xp = float(result.l_xp.detach())
    l_pars = float(result.l_parsimony.detach())
    report = {
        "l_px": l_px,
        "l_xp": l_xp,
        "l_recon": cfg.w_px * l_px + cfg.w_xp * l_xp,
        "l_parsimony": l_pars,
        "l_total": total,
        "sum_gamma": float(result.sum_gamma.detach()),
    }
    return report, grad


def loss_gradient(u: ParamVector, cloud: PointCloud, cfg: LossConfig | None = None,
                  settings: SamplerSettings | None = None) -> np.ndarray:
    """Reverse-mode gradient of the total loss at u (frozen angle grids)."""
    _, grad = loss_value_and_gradient(u, cloud, cfg, settings)
    return grad


def _loss_at(values: np.ndarray, layout: ParamLayout, ctx: _EvalContext, cfg) -> float:
    with torch.no_grad():
        result = forward_loss(torch.from_numpy(values.copy()), layout, ctx, cfg)
    total = float(result.total)
    if not np.isfinite(total):
        raise NonFiniteLoss(f"total loss is {total}")
    return total


def _structure_at(values: np.ndarray, layout: ParamLayout, ctx: _EvalContext, cfg):
    with torch.no_grad():
        return forward_loss(torch.from_numpy(values.copy()), layout, ctx, cfg).structure


def _same_structure(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def finite_difference_gradient(u: ParamVector, cloud: PointCloud, cfg: LossConfig | None = None,
                               h: float = 1e-5, settings: SamplerSettings | None = None,
                               return_stability: bool = False):
    """Coordinate-wise central differences on the identical forward function.

    Stability marks coordinates whose argmin/sort/hinge structure is
    unchanged within +/- 10h (branch switches make the comparison moot).
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    cfg = cfg or LossConfig()
    ctx = _prepare(u, cloud, settings)
    base = u.values
    grad = np.zeros_like(base)
    stable = np.ones(base.size, dtype=bool)
    base_structure = _structure_at(base, u.layout, ctx, cfg)
    for j in range(base.size):
        bumped = base.copy()
        bumped[j] = base[j] + h
        up = _loss_at(bumped, u.layout, ctx, cfg)
        bumped[j] = base[j] - h
        down = _loss_at(bumped, u.layout, ctx, cfg)
        grad[j] = (up - down) / (2.0 * h)
        if return_stability:
            for step in (10.0 * h, -10.0 * h):
                bumped[j] = base[j] + step
                if not _same_structure(base_structure, _structure_at(bumped, u.layout, ctx, cfg)):
                    stable[j] = False
                    break
    if return_stability:
        return grad, stable
    return grad


def gradient_check(u: ParamVector, cloud: PointCloud, cfg: LossConfig | None = None,
                   h: float = 1e-5, settings: SamplerSettings | None = None) -> GradReport:
    """Analytic vs central-difference gradients on one shared frozen grid."""
    cfg = cfg or LossConfig()
    settings = settings or SamplerSettings()
    if settings.grids is None:
        settings = SamplerSettings(k=settings.k, mode=settings.mode, grids=build_grids(u, settings))
    analytic = loss_gradient(u, cloud, cfg, settings)
    numeric, stable = finite_difference_gradient(u, cloud, cfg, h, settings, return_stability=True)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    return GradReport(analytic=analytic, numeric=numeric, max_rel_err=float(rel[worst]),
                      worst_index=u.layout.coordinate_name(worst), stable=stable)
