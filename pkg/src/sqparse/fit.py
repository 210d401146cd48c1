"""Direct gradient-based fitting: reparametrization, Adam, two-phase schedule.

Unconstrained logits map to bounded parameters (sigmoid for sizes, shape
exponents and existence probabilities; quaternions normalized on use;
translations free).  Phase 1 optimizes everything; phase 2 freezes all but
the existence logits, which removes remaining overlapping primitives.
Restarts perturb the initialization and the best final total loss wins.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import grad, sampler
from .errors import AllRestartsFailed, NonFiniteLoss, TooFewPoints, ZeroQuaternion
from .geometry import EPSILON_MAX, EPSILON_MIN, Ensemble, Pose, ShapeParams, Superquadric
from .grad import ParamLayout, ParamVector, SamplerSettings
from .io import PointCloud
from .loss import LossConfig

EPSILON_LO = 0.1
EPSILON_SPAN = 1.8


@dataclass
class FitConfig:
    max_prims: int = 1
    iters_main: int = 2000
    iters_gamma: int = 500
    lr: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    restarts: int = 1
    seed: int = 0
    resample_each_iter: bool = False
    samples_per_prim: int = 200  # K surface samples per primitive
    target_points: int = 1000  # N target samples
    loss: LossConfig = field(default_factory=LossConfig)
    alpha_bounds: tuple[float, float] = (0.005, 0.5)
    trace_every: int = 50

    def __post_init__(self):
        if self.max_prims < 1 or self.iters_main < 1 or self.restarts < 1:
            raise ValueError("max_prims, iters_main and restarts must be >= 1")
        if self.iters_gamma < 0:
            raise ValueError("iters_gamma must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (self.alpha_bounds[0] < self.alpha_bounds[1]):
            raise ValueError("alpha_bounds must be (min, max) with min < max")
        if self.samples_per_prim < 4 or self.target_points < 1 or self.trace_every < 1:
            raise ValueError("sample counts and trace_every must be positive")

    def layout(self) -> ParamLayout:
        return ParamLayout(self.max_prims, self.alpha_bounds[0], self.alpha_bounds[1])


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    l_px: float
    l_xp: float
    l_parsimony: float
    l_total: float
    sum_gamma: float
    active: int


@dataclass
class FitTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must be strictly increasing")
        self.records.append(rec)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def _logit(y):
    y = np.clip(np.asarray(y, dtype=float), 1e-9, 1 - 1e-9)
    return np.log(y / (1.0 - y))


def reparam_forward(u: ParamVector) -> Ensemble:
    """Map unconstrained logits to a valid ensemble (quaternions kept raw)."""
    layout = u.layout
    prims = []
    gammas = []
    for m in range(layout.n_primitives):
        alpha = layout.alpha_min + (layout.alpha_max - layout.alpha_min) * _sigmoid(
            u.values[layout.field_slice(m, "size")])
        # sigmoid saturation can overshoot the closed range by one ulp
        epsilon = np.clip(EPSILON_LO + EPSILON_SPAN * _sigmoid(u.values[layout.field_slice(m, "shape")]),
                          EPSILON_MIN, EPSILON_MAX)
        t = u.values[layout.field_slice(m, "translation")]
        q = u.values[layout.field_slice(m, "quaternion")]
        if np.linalg.norm(q) < 1e-12:
            raise ZeroQuaternion(f"primitive {m}: quaternion logits are (near) zero")
        prims.append(Superquadric(ShapeParams(alpha, epsilon), Pose(q=q.copy(), t=t.copy())))
        gammas.append(_sigmoid(u.values[layout.field_slice(m, "gamma")])[0])
    return Ensemble(tuple(prims), np.array(gammas))


def farthest_point_indices(points: np.ndarray, count: int) -> np.ndarray:
    """Greedy FPS; starts at the point farthest from the centroid."""
    centroid = points.mean(axis=0)
    start = int(np.argmax(np.linalg.norm(points - centroid, axis=1)))
    chosen = [start]
    dist = np.linalg.norm(points - points[start], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.array(chosen, dtype=int)


def init_ensemble(cloud: PointCloud, max_prims: int, seed: int = 0,
                  alpha_bounds: tuple[float, float] = (0.005, 0.5)) -> ParamVector:
    """Deterministic starting point: ellipsoids at farthest-point-sampled centers.

    Shape logits start at the sigmoid midpoint (epsilon = 1), sizes at about
    a tenth of the bounding-box diagonal, existence probabilities at 0.5.
    The seed is accepted for interface stability; the construction itself
    has no random component.
    """
    del seed
    points = cloud.points
    if len(points) < max_prims:
        raise TooFewPoints(f"cloud has {len(points)} points, need at least {max_prims}")
    layout = ParamLayout(max_prims, alpha_bounds[0], alpha_bounds[1])
    centers = points[farthest_point_indices(points, max_prims)]
    diag = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
    alpha_target = np.clip(0.1 * diag, alpha_bounds[0] * 1.02, alpha_bounds[1] * 0.98)
    u = np.zeros(layout.size)
    for m in range(max_prims):
        u[layout.field_slice(m, "size")] = _logit(
            (alpha_target - alpha_bounds[0]) / (alpha_bounds[1] - alpha_bounds[0]))
        # shape and gamma logits stay 0 (epsilon = 1, gamma = 0.5)
        u[layout.field_slice(m, "translation")] = -centers[m]  # T(x) = R x + t with R = I
        u[layout.field_slice(m, "quaternion")] = (1.0, 0.0, 0.0, 0.0)
    return ParamVector(u, layout)


def adam_step(state: AdamState, gradient: np.ndarray, cfg: FitConfig) -> tuple[AdamState, np.ndarray]:
    """Standard bias-corrected Adam; returns the new state and the additive update."""
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != state.m.shape:
        raise ValueError("gradient shape does not match optimizer state")
    step = state.step + 1
    m = cfg.adam_beta1 * state.m + (1 - cfg.adam_beta1) * gradient
    v = cfg.adam_beta2 * state.v + (1 - cfg.adam_beta2) * gradient ** 2
    m_hat = m / (1 - cfg.adam_beta1 ** step)
    v_hat = v / (1 - cfg.adam_beta2 ** step)
    update = -cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return AdamState(m, v, step), update


def _perturb_restart(u: ParamVector, cfg: FitConfig, restart: int, diag: float) -> ParamVector:
    """Restart diversity: random orientation plus mild size/shape/position noise."""
    if restart == 0:
        return u.copy()
    rng = np.random.default_rng([cfg.seed, restart])
    values = u.values.copy()
    layout = u.layout
    for m in range(layout.n_primitives):
        values[layout.field_slice(m, "quaternion")] = rng.normal(size=4)
        values[layout.field_slice(m, "size")] += rng.normal(0, 0.3, size=3)
        values[layout.field_slice(m, "shape")] += rng.normal(0, 0.3, size=2)
        values[layout.field_slice(m, "translation")] += rng.normal(0, 0.02 * diag, size=3)
    return ParamVector(values, layout)


def _record(trace: FitTrace, iteration: int, report: dict) -> None:
    gamma_sum = report["sum_gamma"]
    trace.append(TraceRecord(
        iteration=iteration,
        l_px=report["l_px"],
        l_xp=report["l_xp"],
        l_parsimony=report["l_parsimony"],
        l_total=report["l_total"],
        sum_gamma=gamma_sum,
        active=report["active"],
    ))


def _run_restart(cloud: PointCloud, cfg: FitConfig, restart: int) -> tuple[ParamVector, FitTrace, float]:
    layout = cfg.layout()
    diag = float(np.linalg.norm(cloud.points.max(axis=0) - cloud.points.min(axis=0)))
    u = _perturb_restart(init_ensemble(cloud, cfg.max_prims, cfg.seed, cfg.alpha_bounds),
                         cfg, restart, diag)
    trace = FitTrace()
    state = AdamState.zeros(layout.size)
    gamma_mask = np.zeros(layout.size, dtype=bool)
    for m in range(layout.n_primitives):
        gamma_mask[layout.field_slice(m, "gamma")] = True
    jitter_rng = np.random.default_rng([cfg.seed, restart, 7]) if cfg.resample_each_iter else None

    def settings_for(u_now: ParamVector) -> SamplerSettings:
        if jitter_rng is None:
            return SamplerSettings(k=cfg.samples_per_prim)
        ensemble = reparam_forward(u_now)
        grids = [sampler.build_angle_grid(p.shape, cfg.samples_per_prim, jitter_rng=jitter_rng)
                 for p in ensemble.primitives]
        return SamplerSettings(k=cfg.samples_per_prim, grids=grids)

    total_iters = cfg.iters_main + cfg.iters_gamma
    report = None
    for it in range(total_iters):
        if it == cfg.iters_main:  # entering the gamma-only phase
            state = AdamState.zeros(layout.size)
        report, gradient = grad.loss_value_and_gradient(u, cloud, cfg.loss, settings_for(u))
        report["active"] = int(np.sum(_sigmoid(u.values[gamma_mask]) >= 0.5))
        if it % cfg.trace_every == 0:
            _record(trace, it, report)
        state, update = adam_step(state, gradient, cfg)
        if it >= cfg.iters_main:
            update = np.where(gamma_mask, update, 0.0)
        u = ParamVector(u.values + update, layout)

    report, _ = grad.loss_value_and_gradient(u, cloud, cfg.loss, settings_for(u))
    report["active"] = int(np.sum(_sigmoid(u.values[gamma_mask]) >= 0.5))
    _record(trace, total_iters, report)
    return u, trace, report["l_total"]


def fit(cloud: PointCloud, cfg: FitConfig | None = None) -> tuple[Ensemble, FitTrace]:
    """Fit an ensemble to the cloud; among restarts the lowest final total loss wins."""
    cfg = cfg or FitConfig()
    best = None
    failures = []
    for restart in range(cfg.restarts):
        try:
            u, trace, final_total = _run_restart(cloud, cfg, restart)
        except NonFiniteLoss as exc:
            failures.append(f"restart {restart}: {exc}")
            warnings.warn(f"fit restart {restart} aborted: {exc}", stacklevel=2)
            continue
        if best is None or final_total < best[2]:
            best = (u, trace, final_total)
    if best is None:
        raise AllRestartsFailed("; ".join(failures))
    return reparam_forward(best[0]), best[1]
