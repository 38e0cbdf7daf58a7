"""Run configuration: grid, backbone, loss knobs, thresholds, seed, paths."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .backbone import BackboneConfig, default_backbone_config
from .errors import FormatError
from .grid import GridSpec
from .losses import LossWeights

DEFAULT_IOU_THRESHOLDS = {"Vehicle": 0.8, "Pedestrian": 0.55, "Cyclist": 0.55}


@dataclass
class RunConfig:
    seed: int = 0
    grid: GridSpec = field(default_factory=lambda: GridSpec(
        range_min=(0.0, 0.0, 0.0), range_max=(6.4, 6.4, 2.4), voxel_size=(0.1, 0.1, 0.15)))
    backbone: BackboneConfig = field(default_factory=default_backbone_config)
    loss: LossWeights = field(default_factory=LossWeights)
    iou_thresholds: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_IOU_THRESHOLDS))
    weights_path: str | None = None

    def __post_init__(self):
        for name, thr in self.iou_thresholds.items():
            if not 0.0 < thr < 1.0:
                raise FormatError(f"iou threshold for {name} must lie in (0, 1), got {thr}")

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "grid": {
                "range_min": list(self.grid.range_min),
                "range_max": list(self.grid.range_max),
                "voxel_size": list(self.grid.voxel_size),
            },
            "backbone": {
                "variant": self.backbone.variant,
                "voxel_channels": list(self.backbone.voxel_channels),
                "pillar_channels": list(self.backbone.pillar_channels),
                "submanifold_layers": self.backbone.submanifold_layers,
                "sfl_steps": list(self.backbone.sfl_steps),
                "sfl_kernel": self.backbone.sfl_kernel,
                "point_feature_dim": self.backbone.point_feature_dim,
                "neck_layers": self.backbone.neck_layers,
                "neck_channels": self.backbone.neck_channels,
                "readout_voxel_channels": list(self.backbone.readout_voxel_channels),
                "readout_pillar_channels": list(self.backbone.readout_pillar_channels),
            },
            "loss": {
                "gamma": self.loss.gamma,
                "focal_alpha": self.loss.focal_alpha,
                "focal_gamma": self.loss.focal_gamma,
                "rectification_alpha": dict(self.loss.rectification_alpha),
            },
            "iou_thresholds": dict(self.iou_thresholds),
            "paths": {"weights": self.weights_path},
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _take(obj: dict, allowed: set[str], context: str) -> dict:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise FormatError(f"unknown {context} keys: {', '.join(unknown)}")
    return obj


def config_from_json(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise FormatError("config document must be a JSON object")
    _take(doc, {"seed", "grid", "backbone", "loss", "iou_thresholds", "paths"}, "config")
    try:
        grid_doc = _take(dict(doc.get("grid", {})),
                         {"range_min", "range_max", "voxel_size"}, "grid")
        grid_defaults = RunConfig().grid
        grid = GridSpec(
            range_min=tuple(grid_doc.get("range_min", grid_defaults.range_min)),
            range_max=tuple(grid_doc.get("range_max", grid_defaults.range_max)),
            voxel_size=tuple(grid_doc.get("voxel_size", grid_defaults.voxel_size)))

        bb_doc = _take(dict(doc.get("backbone", {})),
                       {"variant", "voxel_channels", "pillar_channels", "submanifold_layers",
                        "sfl_steps", "sfl_kernel", "point_feature_dim", "neck_layers",
                        "neck_channels", "readout_voxel_channels", "readout_pillar_channels"},
                       "backbone")
        defaults = default_backbone_config(bb_doc.get("variant", "dense"))
        backbone = BackboneConfig(
            variant=bb_doc.get("variant", defaults.variant),
            voxel_channels=tuple(bb_doc.get("voxel_channels", defaults.voxel_channels)),
            pillar_channels=tuple(bb_doc.get("pillar_channels", defaults.pillar_channels)),
            submanifold_layers=int(bb_doc.get("submanifold_layers", defaults.submanifold_layers)),
            sfl_steps=tuple(bb_doc.get("sfl_steps", defaults.sfl_steps)),
            sfl_kernel=int(bb_doc.get("sfl_kernel", defaults.sfl_kernel)),
            point_feature_dim=int(bb_doc.get("point_feature_dim", defaults.point_feature_dim)),
            neck_layers=int(bb_doc.get("neck_layers", defaults.neck_layers)),
            neck_channels=int(bb_doc.get("neck_channels", defaults.neck_channels)),
            readout_voxel_channels=tuple(
                bb_doc.get("readout_voxel_channels", defaults.readout_voxel_channels)),
            readout_pillar_channels=tuple(
                bb_doc.get("readout_pillar_channels", defaults.readout_pillar_channels)))

        loss_doc = _take(dict(doc.get("loss", {})),
                         {"gamma", "focal_alpha", "focal_gamma", "rectification_alpha"}, "loss")
        loss_defaults = LossWeights()
        loss = LossWeights(
            gamma=float(loss_doc.get("gamma", loss_defaults.gamma)),
            focal_alpha=float(loss_doc.get("focal_alpha", loss_defaults.focal_alpha)),
            focal_gamma=float(loss_doc.get("focal_gamma", loss_defaults.focal_gamma)),
            rectification_alpha={
                str(k): float(v) for k, v in loss_doc.get(
                    "rectification_alpha", loss_defaults.rectification_alpha).items()})

        paths_doc = _take(dict(doc.get("paths", {})), {"weights"}, "paths")
        thresholds = {str(k): float(v)
                      for k, v in doc.get("iou_thresholds", DEFAULT_IOU_THRESHOLDS).items()}
        return RunConfig(seed=int(doc.get("seed", 0)), grid=grid, backbone=backbone,
                         loss=loss, iou_thresholds=thresholds,
                         weights_path=paths_doc.get("weights"))
    except FormatError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise FormatError(f"invalid configuration: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    return config_from_json(doc)
