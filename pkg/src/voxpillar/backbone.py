"""Four-step dual-branch encoder plus the dense and sparse readout paths.

The encoder interleaves paired sparse conv blocks (a shared-geometry
regular downsample followed by submanifold layers per branch) with the
sparse fusion layer. The dense readout densifies the 8x features and runs
a two-scale conv neck; the sparse readout keeps everything sparse through
16x/32x blocks and merges all scales on the 8x BEV lattice.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .fusion import build_correspondence, sparse_fusion_layer
from .grid import (GridSpec, PointEncoderWeights, SparseTensor2D, SparseTensor3D,
                   build_pillar_features, build_voxel_features, pack_coords)
from .sparse_conv import (ConvSpec, ConvWeights, build_kernel_map, paired_downsample,
                          sparse_conv)

NUM_STEPS = 4
STEP_STRIDES = (1, 2, 4, 8)
VOXEL_INPUT_DIM = 4  # mean (x, y, z, intensity)

DENSE_VOXEL_CHANNELS = (16, 32, 64, 64)
SPARSE_VOXEL_CHANNELS = (16, 32, 64, 128)
PILLAR_CHANNELS = (32, 64, 128, 256)


@dataclass
class BackboneConfig:
    """Channel plan and structural switches of the encoder and readouts."""

    variant: str = "dense"
    voxel_channels: tuple[int, ...] = DENSE_VOXEL_CHANNELS
    pillar_channels: tuple[int, ...] = PILLAR_CHANNELS
    submanifold_layers: int = 2
    sfl_steps: tuple[bool, ...] = (True, True, True, True)
    sfl_kernel: int = 3
    point_feature_dim: int = 32
    neck_layers: int = 5  # M
    neck_channels: int = 128  # D
    readout_voxel_channels: tuple[int, ...] = (128, 128)
    readout_pillar_channels: tuple[int, ...] = (256, 256)

    def __post_init__(self):
        self.voxel_channels = tuple(int(c) for c in self.voxel_channels)
        self.pillar_channels = tuple(int(c) for c in self.pillar_channels)
        self.sfl_steps = tuple(bool(b) for b in self.sfl_steps)
        self.readout_voxel_channels = tuple(int(c) for c in self.readout_voxel_channels)
        self.readout_pillar_channels = tuple(int(c) for c in self.readout_pillar_channels)
        if self.variant not in ("dense", "sparse"):
            raise ValueError(f"variant must be dense or sparse, got {self.variant!r}")
        for name, t, n in (("voxel_channels", self.voxel_channels, NUM_STEPS),
                           ("pillar_channels", self.pillar_channels, NUM_STEPS),
                           ("sfl_steps", self.sfl_steps, NUM_STEPS),
                           ("readout_voxel_channels", self.readout_voxel_channels, 2),
                           ("readout_pillar_channels", self.readout_pillar_channels, 2)):
            if len(t) != n:
                raise ValueError(f"{name} must have {n} entries, got {t}")
        if self.submanifold_layers < 1:
            raise ValueError("submanifold_layers must be at least 1")
        if self.sfl_kernel % 2 == 0 or self.sfl_kernel < 1:
            raise ValueError("sfl_kernel must be odd and positive")
        if self.point_feature_dim < 1 or self.neck_layers < 1 or self.neck_channels < 1:
            raise ValueError("dimensions must be positive")
        if self.variant == "sparse":
            widths = {self.pillar_channels[-1], *self.readout_pillar_channels}
            if len(widths) != 1:
                raise ValueError(
                    "sparse readout needs equal pillar widths at 8x/16x/32x to merge scales")


def default_backbone_config(variant: str = "dense") -> BackboneConfig:
    voxel = DENSE_VOXEL_CHANNELS if variant == "dense" else SPARSE_VOXEL_CHANNELS
    return BackboneConfig(variant=variant, voxel_channels=voxel)


@dataclass
class DenseFeatureMap:
    """Row-major dense BEV map: values has shape (L, W, channels)."""

    values: np.ndarray
    stride: int

    @property
    def extents(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]

    @property
    def num_channels(self) -> int:
        return self.values.shape[2]


def _downsampled(extent: int) -> int:
    # kernel 3, stride 2, padding 1
    return (extent + 2 - 3) // 2 + 1


def step_extents(grid: GridSpec) -> list[tuple[int, int, int]]:
    """Voxel grid shape at each of the 4 encoder steps."""
    ext = grid.extents
    out = [ext]
    for _ in range(NUM_STEPS - 1):
        ext = tuple(_downsampled(e) for e in ext)
        out.append(ext)
    return out


def required_weights(grid: GridSpec, cfg: BackboneConfig) -> dict[str, tuple[int, ...]]:
    """Every named tensor the configured model loads, with its shape."""
    shapes: dict[str, tuple[int, ...]] = {}
    shapes["point_encoder.weight"] = (4, cfg.point_feature_dim)
    shapes["point_encoder.bias"] = (cfg.point_feature_dim,)
    k_sfl = cfg.sfl_kernel * cfg.sfl_kernel
    for branch, offsets, chans, in0 in (("voxel", 27, cfg.voxel_channels, VOXEL_INPUT_DIM),
                                        ("pillar", 9, cfg.pillar_channels, cfg.point_feature_dim)):
        prev = in0
        for s in range(1, NUM_STEPS + 1):
            ch = chans[s - 1]
            if s > 1:
                shapes[f"{branch}.step{s}.down.kernel"] = (offsets, prev, ch)
                shapes[f"{branch}.step{s}.down.bias"] = (ch,)
                prev = ch
            for j in range(cfg.submanifold_layers):
                shapes[f"{branch}.step{s}.subm{j}.kernel"] = (offsets, prev, ch)
                prev = ch
    for s in range(1, NUM_STEPS + 1):
        if cfg.sfl_steps[s - 1]:
            cv, cp = cfg.voxel_channels[s - 1], cfg.pillar_channels[s - 1]
            shapes[f"sfl.step{s}.v2p.kernel"] = (k_sfl, cv, cp)
            shapes[f"sfl.step{s}.p2v.kernel"] = (k_sfl, cp, cv)
    exts = step_extents(grid)
    if cfg.variant == "dense":
        h8 = exts[3][2]
        d = cfg.neck_channels
        for branch, cin in (("voxel", h8 * cfg.voxel_channels[3]), ("pillar", cfg.pillar_channels[3])):
            for scale in (8, 16):
                prev = cin if scale == 8 else d
                for j in range(cfg.neck_layers):
                    shapes[f"neck.{branch}.s{scale}.conv{j}.kernel"] = (3, 3, prev, d)
                    shapes[f"neck.{branch}.s{scale}.conv{j}.scale"] = (d,)
                    shapes[f"neck.{branch}.s{scale}.conv{j}.shift"] = (d,)
                    prev = d
    else:
        out_ch = cfg.readout_pillar_channels[-1]
        vox_widths = [cfg.voxel_channels[3], *cfg.readout_voxel_channels]
        pil_widths = [cfg.pillar_channels[3], *cfg.readout_pillar_channels]
        h_by_scale = {8: exts[3][2], 16: _downsampled(exts[3][2]),
                      32: _downsampled(_downsampled(exts[3][2]))}
        for i, scale in enumerate((16, 32)):
            for branch, offsets, widths in (("voxel", 27, vox_widths), ("pillar", 9, pil_widths)):
                shapes[f"readout.{branch}.block{scale}.down.kernel"] = (offsets, widths[i], widths[i + 1])
                shapes[f"readout.{branch}.block{scale}.down.bias"] = (widths[i + 1],)
                for j in range(cfg.submanifold_layers):
                    shapes[f"readout.{branch}.block{scale}.subm{j}.kernel"] = \
                        (offsets, widths[i + 1], widths[i + 1])
        for scale, width in zip((8, 16, 32), vox_widths):
            shapes[f"readout.voxel.proj{scale}.weight"] = (h_by_scale[scale] * width, out_ch)
    return shapes


def _conv_w(tensors, prefix: str, bias: bool) -> ConvWeights:
    return ConvWeights(kernel=tensors[f"{prefix}.kernel"],
                       bias=tensors[f"{prefix}.bias"] if bias else None)


def _subm_stack(x, branch_ndim: int, tensors, prefix: str, layers: int, out_ch: int):
    """Apply the block's submanifold convolutions, reusing one kernel map."""
    kmap = None
    for j in range(layers):
        spec = ConvSpec.submanifold(branch_ndim, 3, x.num_channels, out_ch)
        if kmap is None:
            kmap = build_kernel_map(x.coords, spec, x.extents)
        w = ConvWeights(kernel=tensors[f"{prefix}.subm{j}.kernel"])
        x = sparse_conv(x, spec, w, kmap)
    return x


def encoder_forward(points, grid: GridSpec, cfg: BackboneConfig,
                    tensors: dict[str, np.ndarray]):
    """Run the 4-step encoder; returns the (voxel, pillar) pair after each step."""
    enc = PointEncoderWeights(weight=tensors["point_encoder.weight"],
                              bias=tensors["point_encoder.bias"])
    voxels = build_voxel_features(points, grid)
    pillars = build_pillar_features(points, grid, enc)
    pairs = []
    for s in range(1, NUM_STEPS + 1):
        cv, cp = cfg.voxel_channels[s - 1], cfg.pillar_channels[s - 1]
        if s > 1:
            spec3 = ConvSpec.regular(3, 3, 2, 1, voxels.num_channels, cv)
            spec2 = ConvSpec.regular(2, 3, 2, 1, pillars.num_channels, cp)
            voxels, pillars = paired_downsample(
                voxels, pillars, spec3, spec2,
                _conv_w(tensors, f"voxel.step{s}.down", bias=True),
                _conv_w(tensors, f"pillar.step{s}.down", bias=True))
        voxels = _subm_stack(voxels, 3, tensors, f"voxel.step{s}", cfg.submanifold_layers, cv)
        pillars = _subm_stack(pillars, 2, tensors, f"pillar.step{s}", cfg.submanifold_layers, cp)
        if cfg.sfl_steps[s - 1]:
            corr = build_correspondence(voxels, pillars)
            voxels, pillars = sparse_fusion_layer(
                voxels, pillars, corr,
                ConvWeights(kernel=tensors[f"sfl.step{s}.v2p.kernel"]),
                ConvWeights(kernel=tensors[f"sfl.step{s}.p2v.kernel"]),
                kernel=cfg.sfl_kernel)
        pairs.append((voxels, pillars))
    return pairs


def height_compress(x: SparseTensor3D) -> SparseTensor2D:
    """Concatenate each BEV column's voxel features by ascending height.

    Output vectors have length H * D with absent heights zero-filled, where
    H is the vertical extent at the tensor's stride.
    """
    h_extent = int(x.extents[2])
    d = x.num_channels
    if x.num_sites == 0:
        return SparseTensor2D(coords=x.coords[:, :2].copy(),
                              features=np.zeros((0, h_extent * d)),
                              stride=x.stride, extents=x.extents[:2])
    bev = x.coords[:, :2]
    new_col = np.r_[True, (np.diff(bev, axis=0) != 0).any(axis=1)]
    group = np.cumsum(new_col) - 1
    out_coords = bev[new_col]
    out = np.zeros((out_coords.shape[0], h_extent * d))
    cols = x.coords[:, 2:3] * d + np.arange(d)[None, :]
    out[group[:, None], cols] = x.features
    return SparseTensor2D(coords=out_coords, features=out, stride=x.stride,
                          extents=x.extents[:2])


def densify(x: SparseTensor2D | SparseTensor3D) -> DenseFeatureMap:
    """Scatter sparse features onto a zero dense BEV map.

    3D input is height-compressed first.
    """
    if isinstance(x, SparseTensor3D):
        x = height_compress(x)
    values = np.zeros(tuple(x.extents) + (x.num_channels,))
    values[x.coords[:, 0], x.coords[:, 1]] = x.features
    return DenseFeatureMap(values=values, stride=x.stride)


def sparsify_dense(dense: DenseFeatureMap) -> SparseTensor2D:
    """Inverse of densify: keep the sites whose feature vector is not all zero."""
    occupied = (dense.values != 0.0).any(axis=2)
    coords = np.argwhere(occupied).astype(np.int64)
    return SparseTensor2D(coords=coords, features=dense.values[occupied],
                          stride=dense.stride, extents=dense.extents)


def dense_conv3x3(x: np.ndarray, kernel: np.ndarray, stride: int = 1) -> np.ndarray:
    """Dense 3x3 cross-correlation with padding 1 on an (L, W, C) array."""
    h, w, _ = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    h_out = (h + 2 - 3) // stride + 1
    w_out = (w + 2 - 3) // stride + 1
    out = np.zeros((h_out, w_out, kernel.shape[3]))
    for dy in range(3):
        for dx in range(3):
            window = xp[dy:dy + stride * (h_out - 1) + 1:stride,
                        dx:dx + stride * (w_out - 1) + 1:stride]
            out += window @ kernel[dy, dx]
    return out


def _dense_block(x, tensors, prefix: str, layers: int, first_stride: int, activation: bool):
    for j in range(layers):
        stride = first_stride if j == 0 else 1
        x = dense_conv3x3(x, tensors[f"{prefix}.conv{j}.kernel"], stride)
        x = x * tensors[f"{prefix}.conv{j}.scale"] + tensors[f"{prefix}.conv{j}.shift"]
        if activation:
            x = np.maximum(x, 0.0)
    return x


def dense_fusion_neck(pairs, tensors: dict[str, np.ndarray], cfg: BackboneConfig,
                      activation: bool = True) -> DenseFeatureMap:
    """Combine both branches' dense maps at 8x and 16x scales.

    Each branch runs a conv block per scale, same-scale maps fuse by
    summation, and the upsampled 16x map is concatenated onto the 8x map,
    yielding 2 * neck_channels at stride 8.
    """
    voxels, pillars = _final_pair(pairs)
    maps = {}
    for branch, x in (("voxel", densify(voxels)), ("pillar", densify(pillars))):
        m8 = _dense_block(x.values, tensors, f"neck.{branch}.s8", cfg.neck_layers, 1, activation)
        m16 = _dense_block(m8, tensors, f"neck.{branch}.s16", cfg.neck_layers, 2, activation)
        maps[branch] = (m8, m16)
    fused8 = maps["voxel"][0] + maps["pillar"][0]
    fused16 = maps["voxel"][1] + maps["pillar"][1]
    up = np.repeat(np.repeat(fused16, 2, axis=0), 2, axis=1)
    up = up[:fused8.shape[0], :fused8.shape[1]]
    return DenseFeatureMap(values=np.concatenate([fused8, up], axis=2), stride=8)


def _final_pair(pairs):
    if len(pairs) != NUM_STEPS:
        raise ShapeMismatch(f"expected {NUM_STEPS} encoder pairs, got {len(pairs)}")
    voxels, pillars = pairs[-1]
    if voxels.stride != 8 or pillars.stride != 8:
        raise ShapeMismatch("readout requires the 8x encoder output")
    return voxels, pillars


def merge_sparse2d(entries, extents, stride: int) -> SparseTensor2D:
    """Union of (coords, features) lists with elementwise sums at shared sites."""
    coords = np.concatenate([c for c, _ in entries], axis=0)
    feats = np.concatenate([f for _, f in entries], axis=0)
    key = pack_coords(coords, extents)
    order = np.argsort(key, kind="stable")
    key, coords, feats = key[order], coords[order], feats[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    summed = np.add.reduceat(feats, starts, axis=0)
    return SparseTensor2D(coords=coords[starts], features=summed, stride=stride,
                          extents=tuple(extents))


def sparse_readout(pairs, tensors: dict[str, np.ndarray], cfg: BackboneConfig) -> SparseTensor2D:
    """Fully sparse multi-scale readout on the 8x BEV lattice.

    Extra paired blocks produce 16x and 32x features; voxels are height
    compressed and projected to the pillar width per scale; everything is
    mapped back to the 8x lattice (coordinate times the stride ratio) and
    summed over the union of sites.
    """
    voxels, pillars = _final_pair(pairs)
    scales = [(8, voxels, pillars)]
    v, p = voxels, pillars
    vox_widths = [cfg.voxel_channels[3], *cfg.readout_voxel_channels]
    pil_widths = [cfg.pillar_channels[3], *cfg.readout_pillar_channels]
    for i, scale in enumerate((16, 32)):
        spec3 = ConvSpec.regular(3, 3, 2, 1, vox_widths[i], vox_widths[i + 1])
        spec2 = ConvSpec.regular(2, 3, 2, 1, pil_widths[i], pil_widths[i + 1])
        v, p = paired_downsample(
            v, p, spec3, spec2,
            _conv_w(tensors, f"readout.voxel.block{scale}.down", bias=True),
            _conv_w(tensors, f"readout.pillar.block{scale}.down", bias=True))
        v = _subm_stack(v, 3, tensors, f"readout.voxel.block{scale}",
                        cfg.submanifold_layers, vox_widths[i + 1])
        p = _subm_stack(p, 2, tensors, f"readout.pillar.block{scale}",
                        cfg.submanifold_layers, pil_widths[i + 1])
        scales.append((scale, v, p))
    entries = []
    for scale, v, p in scales:
        ratio = scale // 8
        compressed = height_compress(v)
        proj = tensors[f"readout.voxel.proj{scale}.weight"]
        if proj.shape[0] != compressed.num_channels:
            raise ShapeMismatch(
                f"projection for scale {scale} expects {proj.shape[0]} channels, "
                f"got {compressed.num_channels}")
        entries.append((compressed.coords * ratio, compressed.features @ proj))
        entries.append((p.coords * ratio, p.features))
    return merge_sparse2d(entries, pillars.extents, stride=8)


def forward(points, grid: GridSpec, cfg: BackboneConfig, tensors: dict[str, np.ndarray]):
    """Whole-pipeline pass: encoder pairs plus the variant's readout."""
    pairs = encoder_forward(points, grid, cfg, tensors)
    if cfg.variant == "dense":
        readout = dense_fusion_neck(pairs, tensors, cfg)
    else:
        readout = sparse_readout(pairs, tensors, cfg)
    return pairs, readout
