"""Point cloud quantization into sparse voxel and pillar tensors.

Both branches share the same X-Y lattice, so the set of occupied pillar
cells always equals the bird's-eye-view projection of the occupied voxel
cells. Downstream fusion relies on that equality being exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGrid, ShapeMismatch

# Row-major (l, w, h) packing must fit a signed 64-bit key.
_MAX_PACKED_CELLS = 2**62


@dataclass(frozen=True)
class GridSpec:
    """Voxelization geometry shared by the voxel and pillar branches.

    Cells are half-open ``[lo, lo + size)`` per axis; the pillar grid is the
    X-Y restriction of the voxel grid (same sizes, same extents).
    """

    range_min: tuple[float, float, float]
    range_max: tuple[float, float, float]
    voxel_size: tuple[float, float, float]
    extents: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        rmin = tuple(float(v) for v in self.range_min)
        rmax = tuple(float(v) for v in self.range_max)
        size = tuple(float(v) for v in self.voxel_size)
        if len(rmin) != 3 or len(rmax) != 3 or len(size) != 3:
            raise ValueError("range_min, range_max, voxel_size must have 3 components")
        for lo, hi, sz in zip(rmin, rmax, size):
            if not (np.isfinite(lo) and np.isfinite(hi) and np.isfinite(sz)):
                raise ValueError("grid spec values must be finite")
            if hi <= lo:
                raise ValueError(f"range_max must exceed range_min per axis ({hi} <= {lo})")
            if sz <= 0:
                raise ValueError(f"voxel_size must be positive ({sz})")
        # Small epsilon so an exact multiple of the cell size is not lost to
        # floating point (6.4 / 0.1 -> 63.9999...).
        ext = tuple(int(np.floor((hi - lo) / sz + 1e-9)) for lo, hi, sz in zip(rmin, rmax, size))
        if min(ext) < 1:
            raise ValueError("grid must contain at least one cell per axis")
        if (ext[0] + 1) * (ext[1] + 1) * (ext[2] + 1) >= _MAX_PACKED_CELLS:
            raise ValueError("grid extents too large for 64-bit coordinate packing")
        object.__setattr__(self, "range_min", rmin)
        object.__setattr__(self, "range_max", rmax)
        object.__setattr__(self, "voxel_size", size)
        object.__setattr__(self, "extents", ext)

    @property
    def bev_extents(self) -> tuple[int, int]:
        return self.extents[:2]


@dataclass
class SparseTensor3D:
    """Occupied voxel cells with per-cell feature vectors.

    ``coords`` is (N, 3) int64 with rows (l, w, h), unique and sorted
    lexicographically; ``features`` is (N, D) float64; ``extents`` is the
    grid shape at the current ``stride``.
    """

    coords: np.ndarray
    features: np.ndarray
    stride: int
    extents: tuple[int, int, int]

    @property
    def num_sites(self) -> int:
        return self.coords.shape[0]

    @property
    def num_channels(self) -> int:
        return self.features.shape[1]

    def bev_coords(self) -> np.ndarray:
        """Unique (l, w) projection of the voxel coordinates, lex sorted."""
        if self.coords.shape[0] == 0:
            return self.coords[:, :2].copy()
        return np.unique(self.coords[:, :2], axis=0)

    def validate(self):
        _validate_sites(self.coords, self.features, self.extents, 3)


@dataclass
class SparseTensor2D:
    """Occupied pillar cells with per-cell feature vectors."""

    coords: np.ndarray
    features: np.ndarray
    stride: int
    extents: tuple[int, int]

    @property
    def num_sites(self) -> int:
        return self.coords.shape[0]

    @property
    def num_channels(self) -> int:
        return self.features.shape[1]

    def validate(self):
        _validate_sites(self.coords, self.features, self.extents, 2)


@dataclass
class PointEncoderWeights:
    """Single linear + ReLU encoder applied per point before pillar max-pooling."""

    weight: np.ndarray  # (4, D)
    bias: np.ndarray  # (D,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[0] != 4:
            raise ShapeMismatch(f"point encoder weight must be (4, D), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[1],):
            raise ShapeMismatch(
                f"point encoder bias {self.bias.shape} does not match weight {self.weight.shape}"
            )
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ValueError("point encoder weights must be finite")

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


def _validate_sites(coords, features, extents, ndim):
    assert coords.ndim == 2 and coords.shape[1] == ndim, coords.shape
    assert features.ndim == 2 and features.shape[0] == coords.shape[0]
    assert np.isfinite(features).all(), "non-finite features"
    assert (coords >= 0).all(), "negative coordinate"
    assert (coords < np.asarray(extents)).all(), "coordinate outside extents"
    if coords.shape[0] > 1:
        packed = pack_coords(coords, extents)
        assert (np.diff(packed) > 0).all(), "coords not unique/lex-sorted"


def pack_coords(coords: np.ndarray, extents) -> np.ndarray:
    """Row-major packing of integer coordinates into a single int64 key.

    Order-isomorphic to lexicographic order for in-bound coordinates, so a
    sorted coordinate list has strictly increasing keys.
    """
    coords = np.asarray(coords, dtype=np.int64)
    key = coords[:, 0]
    for axis in range(1, coords.shape[1]):
        key = key * int(extents[axis]) + coords[:, axis]
    return key


def as_points(points) -> np.ndarray:
    """Coerce to an (N, 4) float64 array of (x, y, z, intensity) rows."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise ValueError(f"point cloud must be (N, 4), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("point cloud contains non-finite values")
    return pts


def assign_voxel_indices(points, spec: GridSpec) -> tuple[np.ndarray, int]:
    """Map each point to its voxel index, or mark it dropped.

    Returns (indices, dropped): indices is (N, 3) int64 with -1 rows for
    dropped points. A point is dropped when any coordinate lies outside
    ``[range_min, range_max)``; being out of range is not an error.
    """
    pts = as_points(points)
    rmin = np.asarray(spec.range_min)
    rmax = np.asarray(spec.range_max)
    size = np.asarray(spec.voxel_size)
    in_range = ((pts[:, :3] >= rmin) & (pts[:, :3] < rmax)).all(axis=1)
    idx = np.floor((pts[:, :3] - rmin) / size).astype(np.int64)
    # Points within float noise of range_max can floor to the extent itself;
    # treat those as dropped so every kept index is strictly in bounds.
    in_range &= (idx < np.asarray(spec.extents)).all(axis=1)
    idx[~in_range] = -1
    dropped = int((~in_range).sum())
    return idx, dropped


def build_voxel_features(points, spec: GridSpec) -> SparseTensor3D:
    """One site per non-empty voxel; feature = mean (x, y, z, intensity).

    Raises EmptyGrid when no point is in range. Points are processed in a
    canonical sorted order so the result is independent of input ordering.
    """
    pts = as_points(points)
    idx, _ = assign_voxel_indices(pts, spec)
    kept = idx[:, 0] >= 0
    if not kept.any():
        raise EmptyGrid("no point falls inside the configured range")
    idx = idx[kept]
    pts = pts[kept]
    key = pack_coords(idx, spec.extents)
    # Canonical accumulation order: by cell, then by point value, so any
    # permutation of the input yields bitwise identical means.
    order = np.lexsort((pts[:, 3], pts[:, 2], pts[:, 1], pts[:, 0], key))
    key = key[order]
    pts = pts[order]
    idx = idx[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    counts = np.diff(np.r_[starts, key.size])
    sums = np.add.reduceat(pts, starts, axis=0)
    feats = sums / counts[:, None]
    coords = idx[starts]
    return SparseTensor3D(coords=coords, features=feats, stride=1, extents=spec.extents)


def build_pillar_features(points, spec: GridSpec, weights: PointEncoderWeights) -> SparseTensor2D:
    """Per-point linear + ReLU encoding, max-pooled per pillar.

    Pillar indices are the voxel indices with the vertical component removed.
    """
    pts = as_points(points)
    idx, _ = assign_voxel_indices(pts, spec)
    kept = idx[:, 0] >= 0
    if not kept.any():
        raise EmptyGrid("no point falls inside the configured range")
    pillar_idx = idx[kept][:, :2]
    pts = pts[kept]
    encoded = np.maximum(pts @ weights.weight + weights.bias, 0.0)
    key = pack_coords(pillar_idx, spec.bev_extents)
    order = np.argsort(key, kind="stable")
    key = key[order]
    encoded = encoded[order]
    pillar_idx = pillar_idx[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    feats = np.maximum.reduceat(encoded, starts, axis=0)
    coords = pillar_idx[starts]
    return SparseTensor2D(coords=coords, features=feats, stride=1, extents=spec.bev_extents)
