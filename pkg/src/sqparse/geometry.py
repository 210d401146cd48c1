"""Superquadric surface/implicit evaluation and rigid-pose transforms.

A superquadric in its canonical frame is described by three axis scales
``alpha`` and two shape exponents ``epsilon``.  The explicit surface is

    r(eta, omega) = [ a1 * cos(eta)^e1 * cos(omega)^e2,
                      a2 * cos(eta)^e1 * sin(omega)^e2,
                      a3 * sin(eta)^e1 ]

with eta in [-pi/2, pi/2] and omega in [-pi, pi].  Fractional powers of
negative trigonometric values are made well-defined by the signed power
convention sign(x)*|x|^p.  A rigid pose (quaternion q, translation t)
carries world points into the canonical frame via T(x) = R(q) x + t.

All functions here are pure and operate on numpy arrays; batched inputs
broadcast over the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidShape, ZeroQuaternion

EPSILON_MIN = 0.1
EPSILON_MAX = 1.9

# Trig values this close to zero are snapped to exactly zero before
# exponentiation, so that cos(pi/2) (= 6.1e-17 in floating point) behaves
# as the exact pole case 0^e = 0.
_TRIG_SNAP = 1e-12


@dataclass(frozen=True)
class ShapeParams:
    """Axis scales and shape exponents of one superquadric."""

    alpha: np.ndarray  # (3,) positive axis scales, world length units
    epsilon: np.ndarray  # (2,) shape exponents in [0.1, 1.9]

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        epsilon = np.asarray(self.epsilon, dtype=float)
        if alpha.shape != (3,) or epsilon.shape != (2,):
            raise InvalidShape(f"expected alpha (3,) and epsilon (2,), got {alpha.shape} {epsilon.shape}")
        if not np.all(np.isfinite(alpha)) or not np.all(alpha > 0):
            raise InvalidShape(f"axis scales must be positive and finite, got {alpha}")
        if not np.all(np.isfinite(epsilon)) or np.any(epsilon < EPSILON_MIN) or np.any(epsilon > EPSILON_MAX):
            raise InvalidShape(f"shape exponents must lie in [{EPSILON_MIN}, {EPSILON_MAX}], got {epsilon}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "epsilon", epsilon)


@dataclass(frozen=True)
class Pose:
    """Rigid world-to-local map T(x) = R(q) x + t."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))  # (q0, q1, q2, q3)
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(4))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))


@dataclass(frozen=True)
class Superquadric:
    shape: ShapeParams
    pose: Pose


@dataclass(frozen=True)
class Ensemble:
    """M posed superquadrics plus per-primitive existence probabilities."""

    primitives: tuple[Superquadric, ...]
    gamma: np.ndarray  # (M,) existence probabilities in [0, 1]

    def __post_init__(self):
        prims = tuple(self.primitives)
        gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        if len(prims) < 1 or len(prims) != gamma.size:
            raise ValueError(f"need M >= 1 primitives with matching gamma, got {len(prims)} and {gamma.size}")
        if not np.all((gamma >= 0) & (gamma <= 1)):
            raise ValueError(f"existence probabilities must lie in [0, 1], got {gamma}")
        object.__setattr__(self, "primitives", prims)
        object.__setattr__(self, "gamma", gamma)

    def __len__(self) -> int:
        return len(self.primitives)


def signed_pow(x, p):
    """sign(x) * |x|**p, elementwise; 0**p is defined as 0 (p > 0)."""
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.abs(x) ** p
    return float(out) if out.ndim == 0 else out


def _snapped_trig(angle):
    """cos/sin with values below the snap threshold clamped to exact zero."""
    c = np.cos(angle)
    s = np.sin(angle)
    c = np.where(np.abs(c) < _TRIG_SNAP, 0.0, c)
    s = np.where(np.abs(s) < _TRIG_SNAP, 0.0, s)
    return c, s


def surface_point(shape: ShapeParams, eta, omega) -> np.ndarray:
    """Canonical-frame surface point(s) r(eta, omega); broadcasts over angles."""
    e1, e2 = shape.epsilon
    ce_raw, se_raw = _snapped_trig(np.asarray(eta, dtype=float))
    co_raw, so_raw = _snapped_trig(np.asarray(omega, dtype=float))
    ce = signed_pow(ce_raw, e1)
    se = signed_pow(se_raw, e1)
    co = signed_pow(co_raw, e2)
    so = signed_pow(so_raw, e2)
    a1, a2, a3 = shape.alpha
    return np.stack(np.broadcast_arrays(a1 * ce * co, a2 * ce * so, a3 * se), axis=-1)


def implicit_value(shape: ShapeParams, p_local) -> float | np.ndarray:
    """Inside-outside function F: < 1 inside, 1 on the surface, > 1 outside.

    F(p) = (|x/a1|^(2/e2) + |y/a2|^(2/e2))^(e2/e1) + |z/a3|^(2/e1)

    Even in every coordinate, so absolute values avoid the negative-base
    issue without the signed-power convention.
    """
    p = np.asarray(p_local, dtype=float)
    e1, e2 = shape.epsilon
    x = np.abs(p[..., 0] / shape.alpha[0])
    y = np.abs(p[..., 1] / shape.alpha[1])
    z = np.abs(p[..., 2] / shape.alpha[2])
    f = (x ** (2.0 / e2) + y ** (2.0 / e2)) ** (e2 / e1) + z ** (2.0 / e1)
    return float(f) if f.ndim == 0 else f


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrix of the normalized quaternion (q0 scalar part)."""
    q = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ZeroQuaternion(f"quaternion norm {n} too small to normalize")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def world_to_local(pose: Pose, x) -> np.ndarray:
    """T(x) = R(q) x + t, mapping world points into the primitive frame."""
    r = quat_to_rotmat(pose.q)
    x = np.asarray(x, dtype=float)
    return x @ r.T + pose.t


def local_to_world(pose: Pose, y) -> np.ndarray:
    """Exact inverse of world_to_local: R(q)^T (y - t)."""
    r = quat_to_rotmat(pose.q)
    y = np.asarray(y, dtype=float)
    return (y - pose.t) @ r
