"""Bidirectional voxel-pillar feature exchange.

Each voxel column is pooled onto its pillar (elementwise max), pillar
features are broadcast back onto their voxels, and each direction passes
through a 2D submanifold transform convolution before additive fusion.
Neither branch gains or loses sites.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyViolation, ShapeMismatch
from .grid import SparseTensor2D, SparseTensor3D
from .sparse_conv import ConvSpec, ConvWeights, build_kernel_map, sparse_conv


@dataclass
class VoxelPillarCorrespondence:
    """Sparse form of the 0/1 voxel-pillar index matrix.

    Voxel coordinates are lex sorted by (l, w, h), so the voxels of one
    pillar form one contiguous run; `pillar_start[j]:pillar_start[j+1]`
    slices pillar j's voxel indices in ascending order.
    """

    pillar_start: np.ndarray  # (N_p + 1,) int64
    voxel_to_pillar: np.ndarray  # (N_v,) int64

    @property
    def num_pillars(self) -> int:
        return self.pillar_start.size - 1

    @property
    def num_voxels(self) -> int:
        return self.voxel_to_pillar.size

    def voxels_of(self, j: int) -> np.ndarray:
        return np.arange(self.pillar_start[j], self.pillar_start[j + 1])


def build_correspondence(voxels: SparseTensor3D, pillars: SparseTensor2D) -> VoxelPillarCorrespondence:
    """Merge the two lex-sorted coordinate streams into the index matrix.

    Linear in the number of sites; any BEV coordinate present in one branch
    but not the other raises ConsistencyViolation.
    """
    vc = voxels.coords
    pc = pillars.coords
    n_v, n_p = vc.shape[0], pc.shape[0]
    if n_v < n_p:
        raise ConsistencyViolation(f"fewer voxels ({n_v}) than pillars ({n_p})")
    starts = np.empty(n_p + 1, dtype=np.int64)
    v2p = np.empty(n_v, dtype=np.int64)
    i = 0
    for j in range(n_p):
        starts[j] = i
        lj, wj = pc[j]
        if i >= n_v or vc[i, 0] != lj or vc[i, 1] != wj:
            raise ConsistencyViolation(f"pillar ({lj}, {wj}) has no matching voxel run")
        while i < n_v and vc[i, 0] == lj and vc[i, 1] == wj:
            v2p[i] = j
            i += 1
    starts[n_p] = i
    if i != n_v:
        raise ConsistencyViolation(
            f"voxel at BEV ({vc[i, 0]}, {vc[i, 1]}) has no matching pillar")
    return VoxelPillarCorrespondence(pillar_start=starts, voxel_to_pillar=v2p)


def sparse_pool(voxels: SparseTensor3D, corr: VoxelPillarCorrespondence) -> np.ndarray:
    """Elementwise max over each pillar's voxel features, shape (N_p, D_v)."""
    if corr.num_voxels != voxels.num_sites:
        raise ShapeMismatch("correspondence was built for a different voxel tensor")
    return np.maximum.reduceat(voxels.features, corr.pillar_start[:-1], axis=0)


def broadcast(pillars: SparseTensor2D, corr: VoxelPillarCorrespondence) -> np.ndarray:
    """Copy each pillar's feature onto all of its voxels, shape (N_v, D_p)."""
    if corr.num_pillars != pillars.num_sites:
        raise ShapeMismatch("correspondence was built for a different pillar tensor")
    return pillars.features[corr.voxel_to_pillar]


def sparse_fusion_layer(voxels: SparseTensor3D, pillars: SparseTensor2D,
                        corr: VoxelPillarCorrespondence,
                        w_v2p: ConvWeights, w_p2v: ConvWeights,
                        kernel: int = 3) -> tuple[SparseTensor3D, SparseTensor2D]:
    """Fuse the branches: pool-conv-add one way, conv-broadcast-add the other.

    w_v2p transforms pooled voxel features (D_v -> D_p); w_p2v transforms
    pillar features (D_p -> D_v) before broadcasting. Both are bias-free 2D
    submanifold convolutions on the pillar lattice; coordinate sets are
    unchanged on both branches.
    """
    d_v = voxels.num_channels
    d_p = pillars.num_channels
    spec_v2p = ConvSpec.submanifold(2, kernel, d_v, d_p)
    spec_p2v = ConvSpec.submanifold(2, kernel, d_p, d_v)
    w_v2p.check(spec_v2p)
    w_p2v.check(spec_p2v)
    kmap = build_kernel_map(pillars.coords, spec_v2p, pillars.extents)

    pooled = sparse_pool(voxels, corr)
    pooled_tensor = SparseTensor2D(pillars.coords, pooled, pillars.stride, pillars.extents)
    to_pillar = sparse_conv(pooled_tensor, spec_v2p, w_v2p, kmap)

    transformed = sparse_conv(pillars, spec_p2v, w_p2v, kmap)
    to_voxel = broadcast(transformed, corr)

    fused_voxels = SparseTensor3D(voxels.coords, voxels.features + to_voxel,
                                  voxels.stride, voxels.extents)
    fused_pillars = SparseTensor2D(pillars.coords, pillars.features + to_pillar.features,
                                   pillars.stride, pillars.extents)
    return fused_voxels, fused_pillars
