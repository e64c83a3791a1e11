"""Pure Python / numpy implementations of the geometry kernels.

Used when the compiled ``_ckernels`` extension is unavailable or when
``KWSPOT_PURE_PYTHON=1`` is set. Every function here has the same signature
and semantics as its compiled twin.
"""
import math

import numpy as np
from scipy import ndimage

_EIGHT = np.ones((3, 3), dtype=bool)


def rasterize_polygon(verts, height, width):
    """Boolean raster of cell centers inside ``verts`` (grid index coordinates).

    Cell ``(i, j)`` has its center at ``(j + 0.5, i + 0.5)``. Crossing-number
    test with half-open edges, so a boundary point belongs to exactly one of
    two polygons sharing that edge.
    """
    verts = np.asarray(verts, dtype=np.float64)
    px = np.arange(width, dtype=np.float64) + 0.5
    py = np.arange(height, dtype=np.float64) + 0.5
    inside = np.zeros((height, width), dtype=bool)
    n = len(verts)
    for k in range(n):
        ax, ay = verts[k]
        bx, by = verts[(k + 1) % n]
        rows = (ay > py) != (by > py)
        if not rows.any():
            continue
        yr = py[rows]
        xint = ax + (yr - ay) * (bx - ax) / (by - ay)
        inside[rows] ^= px[None, :] < xint[:, None]
    return inside


def label_components(mask):
    """8-connected component labels (1..n, raster order of first cell) and n."""
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)
    return labels.astype(np.int32), int(n)


def _signed_area(p):
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _ccw(p):
    p = np.asarray(p, dtype=np.float64)
    return p[::-1] if _signed_area(p) < 0 else p


def _clip(subject, a, b):
    # keep the part of `subject` left of the directed line a->b
    out = []
    n = len(subject)
    if n == 0:
        return out
    ex, ey = b[0] - a[0], b[1] - a[1]
    prev = subject[-1]
    prev_side = ex * (prev[1] - a[1]) - ey * (prev[0] - a[0])
    for cur in subject:
        side = ex * (cur[1] - a[1]) - ey * (cur[0] - a[0])
        if side >= 0:
            if prev_side < 0:
                t = prev_side / (prev_side - side)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            out.append((cur[0], cur[1]))
        elif prev_side >= 0:
            t = prev_side / (prev_side - side)
            out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
        prev, prev_side = cur, side
    return out


def convex_intersection_area(p, q):
    """Area of the intersection of two convex polygons (either winding)."""
    p = _ccw(p)
    q = _ccw(q)
    if abs(_signed_area(p)) <= 0.0 or abs(_signed_area(q)) <= 0.0:
        return 0.0
    poly = [(float(x), float(y)) for x, y in p]
    m = len(q)
    for k in range(m):
        poly = _clip(poly, q[k], q[(k + 1) % m])
        if len(poly) < 3:
            return 0.0
    area = 0.0
    for k in range(len(poly)):
        x0, y0 = poly[k]
        x1, y1 = poly[(k + 1) % len(poly)]
        area += x0 * y1 - x1 * y0
    return abs(0.5 * area)


def rotated_nms(corners, scores, threshold):
    """Greedy NMS over convex quads; returns kept indices by descending score."""
    corners = np.asarray(corners, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    areas = [abs(_signed_area(c)) for c in corners]
    suppressed = [False] * n
    keep = []
    for a_pos, i in enumerate(order):
        if suppressed[i]:
            continue
        keep.append(i)
        for j in order[a_pos + 1:]:
            if suppressed[j]:
                continue
            inter = convex_intersection_area(corners[i], corners[j])
            union = areas[i] + areas[j] - inter
            if union > 0.0 and inter / union > threshold:
                suppressed[j] = True
    return np.asarray(keep, dtype=np.int64)


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points):
    """Monotone-chain hull, counter-clockwise (positive shoelace), no repeats."""
    pts = sorted(set((float(x), float(y)) for x, y in np.asarray(points, dtype=np.float64)))
    if len(pts) <= 2:
        return np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    lower = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1], dtype=np.float64)


def min_area_rect(points):
    """Minimum-area enclosing rectangle by rotating calipers.

    Returns ``(cx, cy, w, h, theta)`` where ``w`` is measured along direction
    ``theta`` (an edge direction of the hull, not canonicalized).
    """
    hull = convex_hull(points)
    if len(hull) == 0:
        raise ValueError("no points")
    if len(hull) == 1:
        return float(hull[0, 0]), float(hull[0, 1]), 0.0, 0.0, 0.0
    best = None
    n = len(hull)
    for k in range(n if n > 2 else 1):
        a = hull[k]
        b = hull[(k + 1) % n]
        dx, dy = b[0] - a[0], b[1] - a[1]
        length = math.hypot(dx, dy)
        ux, uy = dx / length, dy / length
        along = hull[:, 0] * ux + hull[:, 1] * uy
        across = -hull[:, 0] * uy + hull[:, 1] * ux
        lo_a, hi_a = float(along.min()), float(along.max())
        lo_c, hi_c = float(across.min()), float(across.max())
        area = (hi_a - lo_a) * (hi_c - lo_c)
        if best is None or area < best[0]:
            ma = 0.5 * (lo_a + hi_a)
            mc = 0.5 * (lo_c + hi_c)
            cx = ma * ux - mc * uy
            cy = ma * uy + mc * ux
            best = (area, cx, cy, hi_a - lo_a, hi_c - lo_c, math.atan2(uy, ux))
    _, cx, cy, w, h, theta = best
    return float(cx), float(cy), float(w), float(h), float(theta)
