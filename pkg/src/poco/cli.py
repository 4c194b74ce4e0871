"""Command-line entry point: ``poco train | reconstruct | eval | probe``.

Settings resolve in three layers: RunConfig defaults, then an optional
``--config`` file of ``key = value`` lines, then explicit flags.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from .fields import AnalyticField
from .geometry import KdTree, Mesh, rescale_to_reference
from .io import FormatError, RunConfig, load_model, read_config, read_obj, read_xyz, save_model, write_obj
from .mesher import GridSpec, MeshingStats, mc_dense, mc_regro
from .metrics import evaluate_reconstruction
from .model import LatentField, ModelField, PocoModel, encode
from .probe import receptive_field_probe
from .training import train
from .tta import encode_chunked, encode_with_tta, plan_chunks, plan_subsamples

logger = logging.getLogger("poco")

GRID_INFLATION = 0.05
SHAPES = ("sphere", "box", "torus")


def _settings(args, mapping):
    """RunConfig from defaults, then ``--config``, then flags that were given."""
    cfg = RunConfig()
    if args.config:
        cfg = read_config(args.config, cfg)
    given = {key: getattr(args, dest) for dest, key in mapping.items() if getattr(args, dest) is not None}
    return cfg.update(given)


def cmd_train(args):
    cfg = _settings(args, {
        "shape": "shape", "steps": "steps", "seed": "seed", "noise": "noise_sigma",
        "points": "points", "queries": "queries", "lr": "lr",
    })
    field = AnalyticField.named(cfg.shape)
    model = PocoModel(cfg.model_config(), seed=cfg.seed)
    t0 = time.perf_counter()
    losses = train(model, field, cfg.steps, cfg.points, cfg.queries, cfg.lr,
                   seed=cfg.seed, sigma_noise=cfg.noise_sigma, log_every=args.log_every)
    tail = losses[-min(100, len(losses)):].mean()
    print(f"trained {cfg.steps} steps on {cfg.shape} in {time.perf_counter() - t0:.1f}s, "
          f"final mean loss {tail:.4f}")
    save_model(model, args.out)
    return 0


def _encode(model, cloud, cfg, tree):
    if cfg.chunk_size and len(cloud) > cfg.chunk_size:
        plan = plan_chunks(cloud, cfg.chunk_size, cfg.chunk_views, seed=cfg.seed, tree=tree)
        logger.info("chunked encoding: %d chunks", len(plan.chunks))
        return encode_chunked(model, cloud, plan, tree)
    if cfg.tta_views > 1:
        size = min(cfg.tta_size, len(cloud))
        plan = plan_subsamples(len(cloud), size, cfg.tta_views, seed=cfg.seed)
        logger.info("TTA: %d subsamples of %d points", len(plan.subsamples), size)
        return encode_with_tta(model, cloud, plan, tree)
    return encode(model, cloud, tree)


def reconstruct(model, cloud, cfg):
    """Mesh of ``cloud`` with ``model`` under the settings in ``cfg``."""
    if cfg.threshold <= 0 or cfg.threshold >= 1:
        raise ValueError("threshold must lie in (0, 1)")
    scale, center = 1.0, cloud.centroid()
    if cfg.rescale_nn > 0:
        cloud, scale = rescale_to_reference(cloud, cfg.rescale_nn)
    tree = KdTree(cloud)
    field = ModelField(model, _encode(model, cloud, cfg, tree))
    box = cloud.aabb().inflated(GRID_INFLATION)
    if cfg.grid_step > 0:
        grid = GridSpec.from_bounds(box, step=cfg.grid_step * scale)
    else:
        grid = GridSpec.from_bounds(box, resolution=cfg.grid_res)
    stats = MeshingStats()
    if cfg.mesher == "dense":
        mesh = mc_dense(field, grid, cfg.dichotomies, cfg.threshold, stats)
    elif cfg.mesher == "regro":
        mesh = mc_regro(field, grid, cloud, cfg.dichotomies, cfg.threshold, stats)
    else:
        raise ValueError(f"unknown mesher {cfg.mesher!r}")
    if scale != 1.0:
        mesh = Mesh(center + (mesh.vertices - center) / scale, mesh.triangles)
    return mesh, grid, stats


def cmd_reconstruct(args):
    cfg = _settings(args, {
        "grid_res": "grid_res", "grid_step": "grid_step", "tta": "tta_views",
        "tta_size": "tta_size", "chunk_size": "chunk_size", "rescale_nn": "rescale_nn",
        "threshold": "threshold", "mesher": "mesher", "seed": "seed",
    })
    model = load_model(args.model)
    cloud = read_xyz(args.input)
    if model.config.use_normals and cloud.normals is None:
        raise FormatError(f"{args.input}: model expects normals, file has 3 columns")
    t0 = time.perf_counter()
    mesh, grid, stats = reconstruct(model, cloud, cfg)
    write_obj(mesh, args.out)
    print(f"{len(mesh.vertices)} vertices, {len(mesh)} triangles on a "
          f"{'x'.join(map(str, grid.dims))} grid, {stats.corner_evaluations} corner evaluations, "
          f"{time.perf_counter() - t0:.1f}s")
    return 0


def cmd_eval(args):
    cfg = _settings(args, {"samples": "samples", "volume_samples": "volume_samples",
                           "fs_threshold": "fs_threshold", "seed": "seed"})
    pred = read_obj(args.pred)
    if len(pred) == 0:
        raise ValueError(f"{args.pred}: mesh has no triangles")
    gt = read_obj(args.gt_mesh) if args.gt_mesh else AnalyticField.named(args.gt_shape)
    report = evaluate_reconstruction(pred, gt, cfg.samples, cfg.volume_samples,
                                     seed=cfg.seed, fs_threshold=cfg.fs_threshold)
    print(report.as_key_values() if args.machine else report.as_text())
    return 0


def cmd_probe(args):
    model = load_model(args.model)
    cloud = read_xyz(args.input)
    found = receptive_field_probe(model, cloud, args.index, args.threshold)
    print(f"{len(found)} of {len(cloud)} points reach the latent of point {args.index}")
    if args.list:
        print(" ".join(map(str, sorted(found))))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="poco", description="Point-convolution surface reconstruction.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on an analytic shape")
    p.add_argument("--shape", choices=SHAPES)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", type=float, help="Gaussian noise sigma on input points")
    p.add_argument("--points", type=int, help="surface points per step")
    p.add_argument("--queries", type=int, help="query points per step")
    p.add_argument("--lr", type=float)
    p.add_argument("--log-every", type=int, default=100)
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="mesh a point cloud with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--grid-res", type=int)
    grid.add_argument("--grid-step", type=float)
    p.add_argument("--tta", type=int, help="TTA views per point (1 = off)")
    p.add_argument("--tta-size", type=int, help="points per TTA subsample")
    p.add_argument("--chunk-size", type=int, help="encode in kNN chunks of this many points")
    p.add_argument("--rescale-nn", type=float, help="rescale to this mean NN distance first")
    p.add_argument("--threshold", type=float)
    p.add_argument("--mesher", choices=("regro", "dense"))
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="score a mesh against ground truth")
    p.add_argument("--pred", required=True)
    gt = p.add_mutually_exclusive_group(required=True)
    gt.add_argument("--gt-mesh")
    gt.add_argument("--gt-shape", choices=SHAPES)
    p.add_argument("--samples", type=int, help="surface samples per mesh")
    p.add_argument("--volume-samples", type=int)
    p.add_argument("--fs-threshold", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--machine", action="store_true", help="print key=value lines")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="receptive field of one point's latent")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--threshold", type=float, default=1e-7)
    p.add_argument("--list", action="store_true", help="print the indices")
    p.set_defaults(func=cmd_probe)
    return parser


def _thread_limit():
    value = os.environ.get("POCO_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ValueError(f"POCO_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ValueError("POCO_THREADS must be >= 1")
    return n


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        limit = _thread_limit()
        if limit is None:
            return args.func(args)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limit):
            return args.func(args)
    except (OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"poco {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
