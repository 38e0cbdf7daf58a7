"""Oriented 3D boxes and rotated-box IoU via convex polygon clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBox

# BEV intersection areas below this are treated as no overlap (shared
# edges and touching corners).
AREA_EPS = 1e-12


@dataclass(frozen=True)
class Box3D:
    """7-DoF oriented box: center, dims (l, w, h), heading about +z.

    Heading is canonicalized into (-pi, pi]; dims must be strictly positive.
    """

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    heading: float

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        dims = tuple(float(v) for v in self.dims)
        heading = float(self.heading)
        if len(center) != 3 or len(dims) != 3:
            raise DegenerateBox("center and dims must have 3 components")
        if not all(math.isfinite(v) for v in center + dims) or not math.isfinite(heading):
            raise DegenerateBox("box parameters must be finite")
        if min(dims) <= 0:
            raise DegenerateBox(f"dims must be strictly positive, got {dims}")
        heading = math.remainder(heading, 2 * math.pi)  # -> [-pi, pi]
        if heading <= -math.pi:
            heading = math.pi
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "heading", heading)

    @property
    def volume(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def z_interval(self) -> tuple[float, float]:
        half = self.dims[2] / 2.0
        return self.center[2] - half, self.center[2] + half

    def to_json(self) -> dict:
        return {"center": list(self.center), "dims": list(self.dims), "heading": self.heading}

    @classmethod
    def from_json(cls, obj: dict) -> "Box3D":
        return cls(center=tuple(obj["center"]), dims=tuple(obj["dims"]), heading=obj["heading"])


def bev_corners(box: Box3D) -> np.ndarray:
    """The 4 BEV corners, counter-clockwise, shape (4, 2)."""
    c, s = math.cos(box.heading), math.sin(box.heading)
    hl, hw = box.dims[0] / 2.0, box.dims[1] / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array(box.center[:2])


def corners_3d(box: Box3D) -> np.ndarray:
    """All 8 corners, shape (8, 3)."""
    bev = bev_corners(box)
    lo, hi = box.z_interval
    out = np.empty((8, 3))
    out[:4, :2] = bev
    out[:4, 2] = lo
    out[4:, :2] = bev
    out[4:, 2] = hi
    return out


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a counter-clockwise polygon."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex subject by a convex CCW clip polygon.

    Points on a clip edge count as inside, so clipping a polygon by itself
    returns its vertex list unchanged.
    """
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        pts = output
        output = []
        m = len(pts)
        for j in range(m):
            px, py = pts[j]
            qx, qy = pts[(j + 1) % m]  # edge p -> q against clip edge a -> b
            p_in = ex * (py - ay) - ey * (px - ax) >= 0.0
            q_in = ex * (qy - ay) - ey * (qx - ax) >= 0.0
            if p_in:
                output.append((px, py))
                if not q_in:
                    output.append(_line_intersection(px, py, qx, qy, ax, ay, bx, by))
            elif q_in:
                output.append(_line_intersection(px, py, qx, qy, ax, ay, bx, by))
    return np.array(output) if output else np.empty((0, 2))


def _line_intersection(px, py, qx, qy, ax, ay, bx, by):
    dx, dy = qx - px, qy - py
    ex, ey = bx - ax, by - ay
    denom = dx * ey - dy * ex
    if denom == 0.0:  # parallel within fp; fall back to the segment start
        return (px, py)
    t = ((ax - px) * ey - (ay - py) * ex) / denom
    return (px + t * dx, py + t * dy)


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    inter = clip_polygon(bev_corners(a), bev_corners(b))
    area = polygon_area(inter)
    return area if area > AREA_EPS else 0.0


def _box_sort_key(box: Box3D):
    return box.center + box.dims + (box.heading,)


def iou3d(a: Box3D, b: Box3D) -> float:
    """Rotated 3D IoU: clipped BEV polygon area times the vertical overlap.

    Volumes are built from the same shoelace arithmetic as the intersection,
    so identical boxes give exactly 1.0; argument order is canonicalized so
    iou3d(a, b) == iou3d(b, a) bitwise.
    """
    if _box_sort_key(b) < _box_sort_key(a):
        a, b = b, a
    area_a = polygon_area(bev_corners(a))
    area_b = polygon_area(bev_corners(b))
    inter_area = bev_intersection_area(a, b)
    lo_a, hi_a = a.z_interval
    lo_b, hi_b = b.z_interval
    dz = min(hi_a, hi_b) - max(lo_a, lo_b)
    if inter_area <= 0.0 or dz <= 0.0:
        return 0.0
    inter = inter_area * dz
    vol_a = area_a * a.dims[2]
    vol_b = area_b * b.dims[2]
    union = vol_a + vol_b - inter
    iou = inter / union
    return min(max(iou, 0.0), 1.0)


def enclosing_aabb(a: Box3D, b: Box3D) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned cuboid covering all 16 corners of both boxes."""
    corners = np.vstack([corners_3d(a), corners_3d(b)])
    return corners.min(axis=0), corners.max(axis=0)


def point_in_box(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Face-inclusive membership test for (N, >=3) points."""
    p = np.asarray(points, dtype=np.float64)[:, :3] - np.array(box.center)
    c, s = math.cos(-box.heading), math.sin(-box.heading)
    local_x = c * p[:, 0] - s * p[:, 1]
    local_y = s * p[:, 0] + c * p[:, 1]
    half = np.array(box.dims) / 2.0
    return (np.abs(local_x) <= half[0]) & (np.abs(local_y) <= half[1]) & (np.abs(p[:, 2]) <= half[2])
