"""Command-line surface: voxelize, forward, density, recall, iou-check, selftest."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .backbone import densify, forward, required_weights
from .config import config_from_json, load_config
from .density import recall_by_density, vertical_density
from .errors import VoxPillarError
from .formats import FormatError, load_boxes, read_cloud, write_csv, write_dump
from .geometry import Box3D, iou3d
from .grid import PointEncoderWeights, build_pillar_features, build_voxel_features
from .manifest import load_manifest, resolve_weights
from .reference import monte_carlo_iou
from .selftest import run_selftest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxpillar",
                                     description="Sparse voxel-pillar encoding engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", help="write the initial sparse voxel/pillar tensors")
    p.add_argument("cloud")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("forward", help="run the backbone and write the readout")
    p.add_argument("cloud")
    p.add_argument("--config", required=True)
    p.add_argument("--weights")
    p.add_argument("--dump-intermediates", dest="dump_dir")
    p.add_argument("--variant", choices=("dense", "sparse"))
    p.add_argument("--out")

    p = sub.add_parser("density", help="per-box vertical density records as CSV")
    p.add_argument("cloud")
    p.add_argument("boxes")
    p.add_argument("--out", required=True)

    p = sub.add_parser("recall", help="recall grouped by vertical density as CSV")
    p.add_argument("gt")
    p.add_argument("pred")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("iou-check", help="validate clipped IoU against Monte-Carlo sampling")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=1_000_000)

    sub.add_parser("selftest", help="run all oracle suites")
    return parser


def _load_run(args):
    cfg = load_config(args.config)
    if getattr(args, "variant", None):
        doc = cfg.to_json()
        doc["backbone"]["variant"] = args.variant
        # channel plans are variant defaults unless the file pinned them
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        raw_bb = raw.get("backbone", {}) if isinstance(raw, dict) else {}
        for key in ("voxel_channels", "pillar_channels"):
            if key not in raw_bb:
                doc["backbone"].pop(key)
        cfg = config_from_json(doc)
    return cfg


def _model_tensors(cfg, weights_path):
    required = required_weights(cfg.grid, cfg.backbone)
    manifest = None
    path = weights_path or cfg.weights_path
    if path:
        manifest = load_manifest(path)
    return resolve_weights(required, manifest, seed=cfg.seed)


def cmd_voxelize(args) -> int:
    cfg = _load_run(args)
    points = read_cloud(args.cloud)
    tensors = _model_tensors(cfg, None)
    enc = PointEncoderWeights(weight=tensors["point_encoder.weight"],
                              bias=tensors["point_encoder.bias"])
    voxels = build_voxel_features(points, cfg.grid)
    pillars = build_pillar_features(points, cfg.grid, enc)
    write_dump(args.out, [
        ("voxels", voxels.coords, voxels.features, voxels.stride, voxels.extents),
        ("pillars", pillars.coords, pillars.features, pillars.stride, pillars.extents),
    ])
    print(f"wrote {voxels.num_sites} voxels, {pillars.num_sites} pillars to {args.out}",
          file=sys.stderr)
    return 0


def cmd_forward(args) -> int:
    cfg = _load_run(args)
    points = read_cloud(args.cloud)
    tensors = _model_tensors(cfg, args.weights)
    pairs, readout = forward(points, cfg.grid, cfg.backbone, tensors)
    if args.dump_dir:
        os.makedirs(args.dump_dir, exist_ok=True)
        for step, (v, p) in enumerate(pairs, start=1):
            write_dump(os.path.join(args.dump_dir, f"step{step}.vpt"), [
                (f"step{step}.voxels", v.coords, v.features, v.stride, v.extents),
                (f"step{step}.pillars", p.coords, p.features, p.stride, p.extents),
            ])
        _dump_readout(os.path.join(args.dump_dir, "readout.vpt"), cfg, readout)
    if args.out:
        _dump_readout(args.out, cfg, readout)
    if cfg.backbone.variant == "dense":
        shape = readout.values.shape
        print(f"dense readout {shape[0]}x{shape[1]}x{shape[2]} at stride {readout.stride}",
              file=sys.stderr)
    else:
        print(f"sparse readout {readout.num_sites} sites x {readout.num_channels} channels "
              f"at stride {readout.stride}", file=sys.stderr)
    return 0


def _dump_readout(path, cfg, readout):
    if cfg.backbone.variant == "dense":
        l, w = readout.extents
        coords = np.stack(np.meshgrid(np.arange(l), np.arange(w), indexing="ij"),
                          axis=-1).reshape(-1, 2)
        feats = readout.values.reshape(l * w, readout.num_channels)
        write_dump(path, [("readout.dense", coords, feats, readout.stride, (l, w))])
    else:
        write_dump(path, [("readout.sparse", readout.coords, readout.features,
                           readout.stride, readout.extents)])


def cmd_density(args) -> int:
    points = read_cloud(args.cloud)
    boxes = load_boxes(args.boxes)
    rows = []
    for entry in boxes:
        rec = vertical_density(points, entry["box"], box_id=entry["id"])
        rows.append((rec.box_id, rec.s_z, rec.point_count, rec.horizontal_occupancy))
    write_csv(args.out, ["box_id", "s_z", "point_count", "horizontal_occupancy"], rows)
    print(f"wrote {len(rows)} density records to {args.out}", file=sys.stderr)
    return 0


def cmd_recall(args) -> int:
    if not 0.0 < args.threshold < 1.0:
        raise FormatError(f"threshold must lie in (0, 1), got {args.threshold}")
    gts = load_boxes(args.gt)
    preds = load_boxes(args.pred)
    rows = recall_by_density(
        [g["box"] for g in gts], [g["class"] for g in gts], [g["points"] for g in gts],
        [p["box"] for p in preds], [p["class"] for p in preds], args.threshold)
    write_csv(args.out, ["s_z", "num_gt", "num_recalled", "recall"], rows)
    print(f"wrote {len(rows)} recall rows to {args.out}", file=sys.stderr)
    return 0


def cmd_iou_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for trial in range(args.trials):
        center = rng.uniform(-2, 2, size=3)
        a = Box3D(center=tuple(center), dims=tuple(rng.uniform(0.8, 2.5, size=3)),
                  heading=rng.uniform(-math.pi, math.pi))
        b = Box3D(center=tuple(center + rng.uniform(-1, 1, size=3)),
                  dims=tuple(rng.uniform(0.8, 2.5, size=3)),
                  heading=rng.uniform(-math.pi, math.pi))
        mc = monte_carlo_iou(a, b, samples=args.samples, seed=int(rng.integers(1 << 31)))
        worst = max(worst, abs(iou3d(a, b) - mc))
    print(f"max |clipped - monte-carlo| over {args.trials} trials: {worst:.6f}")
    return 0 if worst <= 0.01 else 1


def cmd_selftest(_args) -> int:
    return 0 if run_selftest(sys.stdout) else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "voxelize": cmd_voxelize,
        "forward": cmd_forward,
        "density": cmd_density,
        "recall": cmd_recall,
        "iou-check": cmd_iou_check,
        "selftest": cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except (VoxPillarError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
