"""Oriented boxes, quads, rasterization and rotated-rectangle fitting.

Coordinates are image pixels with x to the right and y down. A quad is in
canonical winding when its shoelace area is positive, which for y-down
coordinates means the vertices run clockwise on screen (top-left, top-right,
bottom-right, bottom-left for an upright box).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateGeometry, EmptyMask, InvalidGrid

ANGLE_LO = -math.pi / 4
ANGLE_SPAN = math.pi


def signed_area(points) -> float:
    p = np.asarray(points, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(points) -> np.ndarray:
    """Area centroid of a simple polygon."""
    p = np.asarray(points, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    if abs(a) < 1e-12:
        return p.mean(axis=0)
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    return o1 * o2 < 0 and o3 * o4 < 0


def is_self_intersecting(points) -> bool:
    """Check the two non-adjacent edge pairs of a quad for a proper crossing."""
    p = np.asarray(points, dtype=np.float64)
    return _segments_cross(p[0], p[1], p[2], p[3]) or _segments_cross(p[1], p[2], p[3], p[0])


def canonical_angle(theta: float) -> float:
    """Map an angle into [-pi/4, 3pi/4)."""
    t = math.fmod(theta - ANGLE_LO, ANGLE_SPAN)
    if t < 0:
        t += ANGLE_SPAN
    if t >= ANGLE_SPAN:
        t -= ANGLE_SPAN
    return t + ANGLE_LO


@dataclass(frozen=True, eq=False)
class QuadPolygon:
    """Four-vertex polygon, stored in canonical (positive-area) winding."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 2)
        if v.shape != (4, 2):
            raise DegenerateGeometry(f"a quad needs exactly 4 vertices, got {len(v)}")
        if not np.isfinite(v).all():
            raise DegenerateGeometry("non-finite vertex")
        if signed_area(v) < 0:
            v = v[::-1].copy()
        if signed_area(v) <= 0:
            raise DegenerateGeometry("quad has zero area")
        if is_self_intersecting(v):
            raise DegenerateGeometry("quad is self-intersecting")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    @property
    def centroid(self) -> np.ndarray:
        return polygon_centroid(self.vertices)

    def bbox(self) -> tuple[float, float, float, float]:
        v = self.vertices
        return float(v[:, 0].min()), float(v[:, 1].min()), float(v[:, 0].max()), float(v[:, 1].max())

    def tolist(self) -> list[list[float]]:
        return [[float(x), float(y)] for x, y in self.vertices]

    def __eq__(self, other):
        if not isinstance(other, QuadPolygon):
            return NotImplemented
        return bool(np.array_equal(self.vertices, other.vertices))

    def __hash__(self):
        return hash(self.vertices.tobytes())


@dataclass(frozen=True)
class RotatedRect:
    """Rectangle of size ``w`` x ``h``; ``w`` runs along direction ``theta``."""

    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise DegenerateGeometry(f"negative side length ({self.w}, {self.h})")
        object.__setattr__(self, "theta", canonical_angle(float(self.theta)))

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def corners(self) -> np.ndarray:
        """Corner array (4, 2) in canonical winding, starting at the -u/-v corner."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        u = np.array([c, s]) * (self.w / 2)
        v = np.array([-s, c]) * (self.h / 2)
        ctr = self.center
        return np.stack([ctr - u - v, ctr + u - v, ctr + u + v, ctr - u + v])

    def to_quad(self) -> QuadPolygon:
        return QuadPolygon(self.corners())

    @classmethod
    def from_corners(cls, corners) -> "RotatedRect":
        """Inverse of :meth:`corners` for any rectangle given in that vertex order."""
        p = np.asarray(corners, dtype=np.float64)
        if signed_area(p) < 0:
            # mirror the winding but keep the first edge as the w side
            p = p[[1, 0, 3, 2]]
        ctr = p.mean(axis=0)
        e1 = p[1] - p[0]
        e2 = p[2] - p[1]
        return cls(float(ctr[0]), float(ctr[1]), float(np.hypot(*e1)), float(np.hypot(*e2)),
                   math.atan2(e1[1], e1[0]))

    @classmethod
    def from_quad(cls, quad: QuadPolygon) -> "RotatedRect":
        return cls.from_corners(quad.vertices)

    def scaled(self, factor: float) -> "RotatedRect":
        """Scale both sides about the center."""
        return RotatedRect(self.cx, self.cy, self.w * factor, self.h * factor, self.theta)

    def astuple(self) -> tuple[float, float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h, self.theta)


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned raster placed in the image.

    Cell ``(i, j)`` covers ``[ox + j*sx, ox + (j+1)*sx) x [oy + i*sy, oy + (i+1)*sy)``.
    """

    height: int
    width: int
    origin: tuple[float, float] = (0.0, 0.0)
    cell: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InvalidGrid(f"grid must be at least 1x1, got {self.height}x{self.width}")
        if not (self.cell[0] > 0 and self.cell[1] > 0):
            raise InvalidGrid(f"cell size must be positive, got {self.cell}")

    @classmethod
    def for_box(cls, box, size: int) -> "GridSpec":
        """A size x size grid spanning an axis-aligned (x1, y1, x2, y2) box."""
        x1, y1, x2, y2 = (float(b) for b in box)
        return cls(size, size, (x1, y1), ((x2 - x1) / size, (y2 - y1) / size))

    def to_grid(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - np.asarray(self.origin)) / np.asarray(self.cell)

    def to_image(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p * np.asarray(self.cell) + np.asarray(self.origin)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    grid: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)
    cell: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=bool)
        if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
            raise InvalidGrid(f"mask must be a non-empty 2-D raster, got shape {g.shape}")
        object.__setattr__(self, "grid", g)

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.grid.shape[0], self.grid.shape[1], self.origin, self.cell)

    def cell_centers(self) -> np.ndarray:
        """Image coordinates of the centers of true cells, shape (n, 2)."""
        ii, jj = np.nonzero(self.grid)
        pts = np.stack([jj + 0.5, ii + 0.5], axis=1).astype(np.float64)
        return self.spec.to_image(pts)

    def cell_corners(self) -> np.ndarray:
        """Image coordinates of all corners of true cells (duplicates removed)."""
        ii, jj = np.nonzero(self.grid)
        base = np.stack([jj, ii], axis=1).astype(np.float64)
        offsets = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float64)
        pts = np.unique((base[:, None, :] + offsets[None]).reshape(-1, 2), axis=0)
        return self.spec.to_image(pts)


def shrink_polygon(poly: QuadPolygon, scale: float) -> QuadPolygon:
    """Scale a quad about its area centroid by ``scale`` (area scales by scale**2)."""
    if not 0 < scale <= 1:
        raise ValueError(f"scale must be in (0, 1], got {scale}")
    if abs(poly.area) < 1e-9:
        raise DegenerateGeometry("cannot shrink a polygon with area < 1e-9")
    if scale == 1:
        return poly
    c = poly.centroid
    return QuadPolygon(c + scale * (poly.vertices - c))


def rasterize(poly, grid: GridSpec) -> BinaryMask:
    """Mark cells whose center lies inside ``poly`` (QuadPolygon or vertex array)."""
    verts = poly.vertices if isinstance(poly, QuadPolygon) else np.asarray(poly, dtype=np.float64)
    g = kernels.rasterize_polygon(grid.to_grid(verts), grid.height, grid.width)
    return BinaryMask(g, grid.origin, grid.cell)


def fit_rotated_rect(points) -> RotatedRect:
    """Minimum-area rectangle enclosing a point set (rotating calipers on the hull)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyMask("no points to enclose")
    cx, cy, w, h, theta = kernels.min_area_rect(pts)
    return RotatedRect(cx, cy, max(w, 0.0), max(h, 0.0), theta)


def min_area_rotated_rect(mask: BinaryMask, cover_cells: bool = False) -> RotatedRect:
    """Minimum-area rectangle around the true cells of ``mask``.

    By default the rectangle encloses cell centers. With ``cover_cells`` it
    encloses the full cell squares, which is what the mask decoders use when
    pasting a low-resolution mask back into the image.
    """
    if not mask.grid.any():
        raise EmptyMask("mask has no true cells")
    pts = mask.cell_corners() if cover_cells else mask.cell_centers()
    return fit_rotated_rect(pts)


def intersection_area(a, b) -> float:
    pa = a.corners() if isinstance(a, RotatedRect) else np.asarray(a, dtype=np.float64)
    pb = b.corners() if isinstance(b, RotatedRect) else np.asarray(b, dtype=np.float64)
    return float(kernels.convex_intersection_area(pa, pb))


def rotated_iou(a: RotatedRect, b: RotatedRect) -> float:
    if a.area <= 0 or b.area <= 0:
        return 0.0
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def point_in_polygon(point, poly) -> bool:
    """Half-open crossing-number test for a single point."""
    verts = poly.vertices if isinstance(poly, QuadPolygon) else np.asarray(poly, dtype=np.float64)
    x, y = float(point[0]), float(point[1])
    inside = False
    n = len(verts)
    for k in range(n):
        ax, ay = verts[k]
        bx, by = verts[(k + 1) % n]
        if (ay > y) != (by > y):
            if x < ax + (y - ay) * (bx - ax) / (by - ay):
                inside = not inside
    return inside


def point_polygon_distance(point, poly) -> float:
    """Euclidean distance from a point to a polygon; 0 when inside."""
    if point_in_polygon(point, poly):
        return 0.0
    verts = poly.vertices if isinstance(poly, QuadPolygon) else np.asarray(poly, dtype=np.float64)
    p = np.asarray(point, dtype=np.float64)
    best = math.inf
    for k in range(len(verts)):
        a, b = verts[k], verts[(k + 1) % len(verts)]
        ab = b - a
        t = 0.0 if not ab.any() else float(np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0, 1))
        best = min(best, float(np.hypot(*(a + t * ab - p))))
    return best


def box_iou(a, b) -> np.ndarray:
    """Pairwise IoU of axis-aligned (x1, y1, x2, y2) boxes, shapes (n, 4) x (m, 4)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)
