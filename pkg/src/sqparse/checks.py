"""Randomized self-check suites behind `check-loss` / `check-grad` and the acceptance gate."""

from __future__ import annotations

import numpy as np

from . import grad, loss
from .io import PointCloud


def loss_oracle_suite(trials: int, max_prims: int, seed: int, inject_error: float = 0.0) -> tuple[float, int]:
    """Analytical expectation vs exhaustive enumeration on random instances.

    Returns (max absolute deviation, instances run).  `inject_error` biases
    the analytical value; it exists so the failure path of the check command
    is testable.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        m = int(rng.integers(1, max_prims + 1))
        n = int(rng.integers(1, 51))
        deltas = rng.uniform(0.0, 10.0, size=(m, n))
        gamma = rng.uniform(0.0, 1.0, size=m)
        fast = loss.cloud_to_prim_expected(deltas, gamma) + inject_error
        exact = loss.cloud_to_prim_bruteforce(deltas, gamma)
        worst = max(worst, abs(fast - exact))
    return worst, trials


def random_smooth_config(rng: np.random.Generator, m: int, n: int = 100
                         ) -> tuple[grad.ParamVector, PointCloud]:
    """A well-conditioned random instance for finite-difference comparisons.

    Sizes are forced anisotropic and shape exponents kept away from the
    sphere point so no parameter direction degenerates into a near-symmetry
    with a vanishing gradient.
    """
    layout = grad.ParamLayout(m)
    u = np.zeros(layout.size)
    for i in range(m):
        u[layout.field_slice(i, "size")] = rng.normal(0, 0.3, 3) + np.array([-0.8, 0.0, 0.8])
        u[layout.field_slice(i, "shape")] = rng.uniform(0.6, 2.0, 2) * rng.choice([-1.0, 1.0], 2)
        u[layout.field_slice(i, "translation")] = rng.uniform(-0.3, 0.3, 3)
        q = rng.normal(size=4)
        while np.linalg.norm(q) < 0.3:
            q = rng.normal(size=4)
        u[layout.field_slice(i, "quaternion")] = q
        u[layout.field_slice(i, "gamma")] = rng.uniform(-1.5, 1.5)
    cloud = PointCloud(rng.uniform(-0.5, 0.5, size=(n, 3)))
    return grad.ParamVector(u, layout), cloud


def gradient_suite(trials: int, seed: int, m_max: int = 3, n: int = 100, k: int = 50,
                   h: float = 1e-5) -> tuple[float, int, int]:
    """Analytic vs central-difference gradients over random smooth instances.

    Configurations whose argmin/sort/hinge structure switches within 10h of
    the evaluation point are skipped and counted; the comparison would be
    meaningless there.  Returns (max rel err, configs used, configs skipped).
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng(seed)
    worst = 0.0
    used = 0
    skipped = 0
    attempts = 0
    while used < trials and attempts < 5 * trials:
        attempts += 1
        u, cloud = random_smooth_config(rng, int(rng.integers(1, m_max + 1)), n)
        settings = grad.SamplerSettings(k=k)
        report = grad.gradient_check(u, cloud, h=h, settings=settings)
        if not report.stable.all():
            skipped += 1
            continue
        used += 1
        worst = max(worst, report.max_rel_err)
    return worst, used, skipped
