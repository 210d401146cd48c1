"""Command-line front end: fit, eval, check-grad, check-loss, export, sample.

Machine-readable results go to standard output as one JSON line;
diagnostics go to standard error.  Exit codes: 0 success, 1 check failure,
2 usage/input error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io, metrics, sampler
from .errors import (
    AllRestartsFailed,
    DegenerateMesh,
    NoActivePrimitives,
    NonFiniteLoss,
    OpenMesh,
    ParseError,
    SchemaError,
    SqparseError,
    TooFewPoints,
    TooManyPrimitives,
    UnsupportedFormat,
    UnsupportedVersion,
    ZeroQuaternion,
)

_USAGE_ERRORS = (ParseError, UnsupportedFormat, SchemaError, UnsupportedVersion,
                 TooFewPoints, TooManyPrimitives, DegenerateMesh,
                 FileNotFoundError, IsADirectoryError, PermissionError, ValueError)
_RUNTIME_ERRORS = (AllRestartsFailed, NoActivePrimitives, NonFiniteLoss, OpenMesh, ZeroQuaternion)


def _emit(payload: dict) -> None:
    print(json.dumps(payload))


def _load_cloud(path: str, n: int, seed: int) -> io.PointCloud:
    """Mesh files are surface-sampled to n points; clouds are subsampled if larger."""
    lower = path.lower()
    if lower.endswith(".xyz"):
        cloud = io.load_pointcloud(path)
    else:
        mesh = io.load_mesh(path)
        if len(mesh.triangles) > 0:
            return sampler.sample_mesh_surface(mesh, n, seed)
        cloud = io.PointCloud(mesh.vertices)
    if len(cloud) > n:
        keep = np.random.default_rng(seed).choice(len(cloud), size=n, replace=False)
        cloud = io.PointCloud(cloud.points[np.sort(keep)])
    return cloud


def cmd_fit(args) -> int:
    from .fit import FitConfig, fit
    from .loss import LossConfig

    cfg = FitConfig(
        max_prims=args.max_prims,
        iters_main=args.iters_main,
        iters_gamma=args.iters_gamma,
        lr=args.lr,
        adam_beta1=args.adam_beta1,
        adam_beta2=args.adam_beta2,
        adam_eps=args.adam_eps,
        restarts=args.restarts,
        seed=args.seed,
        resample_each_iter=args.resample_each_iter,
        samples_per_prim=args.samples_per_prim,
        target_points=args.target_points,
        loss=LossConfig(w_px=args.w_px, w_xp=args.w_xp, alpha=args.alpha, beta=args.beta,
                        normalize_by_counts=args.normalize_by_counts),
        alpha_bounds=(args.alpha_min, args.alpha_max),
        trace_every=args.trace_every,
    )
    cloud = _load_cloud(args.input, cfg.target_points, cfg.seed)
    cloud, record = io.normalize_to_unit_cube(cloud)
    ensemble, trace = fit(cloud, cfg)
    io.save_ensemble(args.output, ensemble, record)
    trace_path = args.trace or (os.path.splitext(args.output)[0] + ".trace.csv")
    io.save_trace_csv(trace, trace_path)

    final = trace.records[-1]
    try:
        chamfer = metrics.chamfer_eval(ensemble, cloud, metrics.EvalConfig(seed=cfg.seed))
    except NoActivePrimitives:
        chamfer = None
    _emit({
        "l_px": final.l_px,
        "l_xp": final.l_xp,
        "l_recon": final.l_total - final.l_parsimony,
        "l_parsimony": final.l_parsimony,
        "l_total": final.l_total,
        "sum_gamma": final.sum_gamma,
        "active": final.active,
        "chamfer": chamfer,
        "ensemble": args.output,
        "trace": trace_path,
    })
    return 0


def _load_eval_target(path: str, cfg: metrics.EvalConfig):
    """Returns (target cloud, truth object for IoU or None)."""
    lower = path.lower()
    if lower.endswith(".json"):
        truth, _ = io.load_ensemble(path)
        pts = metrics.ensemble_surface_points(truth, cfg.eval_k, cfg.gamma_threshold)
        return io.PointCloud(pts), truth
    if lower.endswith(".xyz"):
        return io.load_pointcloud(path), None
    mesh = io.load_mesh(path)
    if len(mesh.triangles) == 0:
        return io.PointCloud(mesh.vertices), None
    return sampler.sample_mesh_surface(mesh, cfg.eval_n, cfg.seed), mesh


def cmd_eval(args) -> int:
    cfg = metrics.EvalConfig(gamma_threshold=args.gamma_threshold, iou_samples=args.iou_samples,
                             eval_k=args.eval_k, eval_n=args.eval_n, seed=args.seed)
    ensemble, _ = io.load_ensemble(args.ensemble)
    target_cloud, truth = _load_eval_target(args.target, cfg)
    chamfer = metrics.chamfer_eval(ensemble, target_cloud, cfg)
    iou = metrics.volumetric_iou(ensemble, truth, cfg) if truth is not None else None
    _emit({
        "chamfer": chamfer,
        "iou": iou,
        "active": len(metrics.active_primitives(ensemble, cfg.gamma_threshold)),
    })
    return 0


def cmd_check_loss(args) -> int:
    from .checks import loss_oracle_suite

    if args.max_prims > 20:
        raise TooManyPrimitives(f"--max-prims {args.max_prims} exceeds the 2^M guard (20)")
    if args.max_prims < 1 or args.trials < 1:
        raise ValueError("--max-prims and --trials must be >= 1")
    worst, trials = loss_oracle_suite(args.trials, args.max_prims, args.seed,
                                      inject_error=1e-6 if args.inject_error else 0.0)
    _emit({"max_abs_dev": worst, "trials": trials, "tolerance": 1e-9})
    return 0 if worst <= 1e-9 else 1


def cmd_check_grad(args) -> int:
    from .checks import gradient_suite

    if args.trials < 1:
        raise ValueError("--trials must be >= 1")
    worst, used, skipped = gradient_suite(args.trials, args.seed)
    _emit({"max_rel_err": worst, "trials": used, "skipped_near_ties": skipped, "tolerance": 1e-4})
    return 0 if worst <= 1e-4 else 1


def cmd_export(args) -> int:
    ensemble, _ = io.load_ensemble(args.ensemble)
    count = io.export_ensemble_mesh(ensemble, args.resolution, args.threshold, args.output)
    _emit({"output": args.output, "primitives": count, "resolution": args.resolution})
    return 0


def cmd_sample(args) -> int:
    if args.input.lower().endswith(".json"):
        ensemble, _ = io.load_ensemble(args.input)
        active = metrics.active_primitives(ensemble, 0.5)
        if not active:
            raise NoActivePrimitives("ensemble has no active primitive to sample")
        per = max(4, int(np.ceil(args.count / len(active))))
        pts = metrics.ensemble_surface_points(ensemble, per, 0.5, mode=args.mode)[: args.count]
    else:
        mesh = io.load_mesh(args.input)
        pts = sampler.sample_mesh_surface(mesh, args.count, args.seed).points
    lines = "\n".join(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}" for p in pts)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(lines + "\n")
        _emit({"output": args.output, "count": len(pts)})
    else:
        print(lines)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqparse",
                                     description="Superquadric ensemble fitting and evaluation")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap intra-op parallelism (0 = auto; env SQPARSE_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit an ensemble to a mesh or point cloud")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="ensemble JSON path")
    p.add_argument("--trace", default=None, help="trace CSV path (default: alongside output)")
    p.add_argument("--max-prims", type=int, default=1)
    p.add_argument("--iters-main", type=int, default=2000)
    p.add_argument("--iters-gamma", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--adam-beta1", type=float, default=0.9)
    p.add_argument("--adam-beta2", type=float, default=0.999)
    p.add_argument("--adam-eps", type=float, default=1e-8)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resample-each-iter", action="store_true")
    p.add_argument("--samples-per-prim", type=int, default=200)
    p.add_argument("--target-points", type=int, default=1000)
    p.add_argument("--w-px", type=float, default=1.2)
    p.add_argument("--w-xp", type=float, default=0.8)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1e-3)
    p.add_argument("--normalize-by-counts", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--alpha-min", type=float, default=0.005)
    p.add_argument("--alpha-max", type=float, default=0.5)
    p.add_argument("--trace-every", type=int, default=50)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="evaluate an ensemble against a target")
    p.add_argument("ensemble")
    p.add_argument("target", help="mesh, .xyz cloud, or another ensemble JSON")
    p.add_argument("--gamma-threshold", type=float, default=0.5)
    p.add_argument("--iou-samples", type=int, default=100_000)
    p.add_argument("--eval-k", type=int, default=1000)
    p.add_argument("--eval-n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check-loss", help="analytical expectation vs 2^M brute force")
    p.add_argument("--max-prims", type=int, default=12)
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-error", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check_loss)

    p = sub.add_parser("check-grad", help="analytic vs finite-difference gradients")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("export", help="tessellate active primitives to OBJ")
    p.add_argument("ensemble")
    p.add_argument("output")
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("sample", help="sample surface points to .xyz")
    p.add_argument("input", help="mesh file or ensemble JSON")
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["uniform_arc", "uniform_angle"], default="uniform_arc")
    p.set_defaults(func=cmd_sample)
    return parser


def _configure_threads(args) -> None:
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("SQPARSE_THREADS", "0") or 0)
    if threads > 0:
        import torch

        torch.set_num_threads(threads)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _configure_threads(args)
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"sqparse: error: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"sqparse: error: {exc}", file=sys.stderr)
        return 3
    except SqparseError as exc:
        print(f"sqparse: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
