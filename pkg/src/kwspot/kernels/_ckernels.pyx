# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled geometry kernels; same contracts as ``kwspot.kernels._fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport atan2, sqrt, fabs
from libc.stdlib cimport malloc, free

cnp.import_array()


def rasterize_polygon(verts, int height, int width):
    cdef double[:, ::1] v = np.ascontiguousarray(verts, dtype=np.float64)
    out = np.zeros((height, width), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] o = out
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double py, px, ax, ay, bx, by, xint
    for k in range(n):
        ax = v[k, 0]
        ay = v[k, 1]
        bx = v[(k + 1) % n, 0]
        by = v[(k + 1) % n, 1]
        for i in range(height):
            py = i + 0.5
            if (ay > py) != (by > py):
                xint = ax + (py - ay) * (bx - ax) / (by - ay)
                for j in range(width):
                    px = j + 0.5
                    if px < xint:
                        o[i, j] ^= 1
    return out.astype(bool)


def label_components(mask):
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t h = m.shape[0]
    cdef Py_ssize_t w = m.shape[1]
    labels = np.zeros((h, w), dtype=np.int32)
    cdef int[:, ::1] lab = labels
    cdef Py_ssize_t *stack = <Py_ssize_t *> malloc(h * w * sizeof(Py_ssize_t) + 1)
    cdef Py_ssize_t top, cell, ci, cj, ni, nj, i, j
    cdef int di, dj
    cdef int current = 0
    if stack == NULL:
        raise MemoryError()
    try:
        for i in range(h):
            for j in range(w):
                if m[i, j] == 0 or lab[i, j] != 0:
                    continue
                current += 1
                lab[i, j] = current
                top = 0
                stack[top] = i * w + j
                top += 1
                while top > 0:
                    top -= 1
                    cell = stack[top]
                    ci = cell // w
                    cj = cell - ci * w
                    for di in range(-1, 2):
                        ni = ci + di
                        if ni < 0 or ni >= h:
                            continue
                        for dj in range(-1, 2):
                            nj = cj + dj
                            if nj < 0 or nj >= w:
                                continue
                            if m[ni, nj] != 0 and lab[ni, nj] == 0:
                                lab[ni, nj] = current
                                stack[top] = ni * w + nj
                                top += 1
    finally:
        free(stack)
    return labels, int(current)


cdef double _shoelace(double *xs, double *ys, int n) nogil:
    cdef double s = 0.0
    cdef int k
    for k in range(n):
        s += xs[k] * ys[(k + 1) % n] - xs[(k + 1) % n] * ys[k]
    return 0.5 * s


cdef double _intersection(double *px, double *py, int n, double *qx, double *qy, int m,
                          double *bufx, double *bufy, double *tmpx, double *tmpy) nogil:
    # px/py and qx/qy must be counter-clockwise; buffers hold n + m + 1 points
    cdef int cnt = n
    cdef int k, e, out, prev
    cdef double ax, ay, ex, ey, side, prev_side, t, area
    for k in range(n):
        bufx[k] = px[k]
        bufy[k] = py[k]
    for e in range(m):
        if cnt == 0:
            return 0.0
        ax = qx[e]
        ay = qy[e]
        ex = qx[(e + 1) % m] - ax
        ey = qy[(e + 1) % m] - ay
        out = 0
        prev = cnt - 1
        prev_side = ex * (bufy[prev] - ay) - ey * (bufx[prev] - ax)
        for k in range(cnt):
            side = ex * (bufy[k] - ay) - ey * (bufx[k] - ax)
            if side >= 0:
                if prev_side < 0:
                    t = prev_side / (prev_side - side)
                    tmpx[out] = bufx[prev] + t * (bufx[k] - bufx[prev])
                    tmpy[out] = bufy[prev] + t * (bufy[k] - bufy[prev])
                    out += 1
                tmpx[out] = bufx[k]
                tmpy[out] = bufy[k]
                out += 1
            elif prev_side >= 0:
                t = prev_side / (prev_side - side)
                tmpx[out] = bufx[prev] + t * (bufx[k] - bufx[prev])
                tmpy[out] = bufy[prev] + t * (bufy[k] - bufy[prev])
                out += 1
            prev = k
            prev_side = side
        for k in range(out):
            bufx[k] = tmpx[k]
            bufy[k] = tmpy[k]
        cnt = out
        if cnt < 3:
            return 0.0
    area = _shoelace(bufx, bufy, cnt)
    return fabs(area)


cdef void _load_ccw(double[:, ::1] src, double *xs, double *ys):
    cdef int n = src.shape[0]
    cdef int k
    for k in range(n):
        xs[k] = src[k, 0]
        ys[k] = src[k, 1]
    if _shoelace(xs, ys, n) < 0:
        for k in range(n):
            xs[k] = src[n - 1 - k, 0]
            ys[k] = src[n - 1 - k, 1]


def convex_intersection_area(p, q):
    cdef double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef int n = pv.shape[0]
    cdef int m = qv.shape[0]
    cdef int cap = 2 * (n + m) + 2
    cdef double *mem = <double *> malloc((2 * n + 2 * m + 4 * cap) * sizeof(double))
    cdef double result
    if mem == NULL:
        raise MemoryError()
    cdef double *px = mem
    cdef double *py = mem + n
    cdef double *qx = mem + 2 * n
    cdef double *qy = mem + 2 * n + m
    cdef double *bx = mem + 2 * n + 2 * m
    cdef double *by = bx + cap
    cdef double *tx = by + cap
    cdef double *ty = tx + cap
    try:
        _load_ccw(pv, px, py)
        _load_ccw(qv, qx, qy)
        if fabs(_shoelace(px, py, n)) <= 0.0 or fabs(_shoelace(qx, qy, m)) <= 0.0:
            return 0.0
        result = _intersection(px, py, n, qx, qy, m, bx, by, tx, ty)
    finally:
        free(mem)
    return result


def rotated_nms(corners, scores, double threshold):
    cdef double[:, :, ::1] c = np.ascontiguousarray(corners, dtype=np.float64).reshape(-1, 4, 2)
    sc = np.asarray(scores, dtype=np.float64)
    cdef Py_ssize_t n = sc.shape[0]
    # descending score, ties by ascending index
    order_arr = np.lexsort((np.arange(n), -sc)).astype(np.int64)
    cdef long long[::1] order = order_arr
    # 4n x, 4n y, n areas, then four clip buffers
    cdef double *mem = <double *> malloc((n * 9 + 4 * 18) * sizeof(double))
    cdef char *supp = <char *> malloc(n + 1)
    cdef double *xs
    cdef double *ys
    cdef double *areas
    cdef double *bx
    cdef double *by
    cdef double *tx
    cdef double *ty
    cdef Py_ssize_t a, b, i, j, k
    cdef double inter, union
    keep = []
    if mem == NULL or supp == NULL:
        free(mem)
        free(supp)
        raise MemoryError()
    try:
        xs = mem
        ys = mem + 4 * n
        areas = mem + 8 * n
        bx = mem + 8 * n + n
        by = bx + 18
        tx = by + 18
        ty = tx + 18
        for i in range(n):
            supp[i] = 0
            _load_ccw(c[i], xs + 4 * i, ys + 4 * i)
            areas[i] = fabs(_shoelace(xs + 4 * i, ys + 4 * i, 4))
        for a in range(n):
            i = order[a]
            if supp[i]:
                continue
            keep.append(i)
            for b in range(a + 1, n):
                j = order[b]
                if supp[j]:
                    continue
                if areas[i] <= 0.0 or areas[j] <= 0.0:
                    inter = 0.0
                else:
                    inter = _intersection(xs + 4 * i, ys + 4 * i, 4, xs + 4 * j, ys + 4 * j, 4,
                                          bx, by, tx, ty)
                union = areas[i] + areas[j] - inter
                if union > 0.0 and inter / union > threshold:
                    supp[j] = 1
    finally:
        free(mem)
        free(supp)
    return np.asarray(keep, dtype=np.int64)


cdef inline double _cross(double ox, double oy, double ax, double ay, double bx, double by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def convex_hull(points):
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    cdef double[:, ::1] p = np.ascontiguousarray(pts)
    cdef Py_ssize_t n = p.shape[0]
    if n <= 2:
        return np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    hull = np.empty((2 * n, 2), dtype=np.float64)
    cdef double[:, ::1] hv = hull
    cdef Py_ssize_t k = 0
    cdef Py_ssize_t i, t
    for i in range(n):
        while k >= 2 and _cross(hv[k - 2, 0], hv[k - 2, 1], hv[k - 1, 0], hv[k - 1, 1], p[i, 0], p[i, 1]) <= 0:
            k -= 1
        hv[k, 0] = p[i, 0]
        hv[k, 1] = p[i, 1]
        k += 1
    t = k + 1
    for i in range(n - 2, -1, -1):
        while k >= t and _cross(hv[k - 2, 0], hv[k - 2, 1], hv[k - 1, 0], hv[k - 1, 1], p[i, 0], p[i, 1]) <= 0:
            k -= 1
        hv[k, 0] = p[i, 0]
        hv[k, 1] = p[i, 1]
        k += 1
    return hull[:k - 1].copy()


def min_area_rect(points):
    hull_arr = convex_hull(points)
    cdef double[:, ::1] hv = hull_arr
    cdef Py_ssize_t n = hv.shape[0]
    if n == 0:
        raise ValueError("no points")
    if n == 1:
        return float(hv[0, 0]), float(hv[0, 1]), 0.0, 0.0, 0.0
    cdef Py_ssize_t k, e, edges
    cdef double dx, dy, length, ux, uy, al, ac
    cdef double lo_a, hi_a, lo_c, hi_c, area
    cdef double best_area = -1.0
    cdef double bcx = 0, bcy = 0, bw = 0, bh = 0, bth = 0
    cdef double ma, mc
    edges = n if n > 2 else 1
    for e in range(edges):
        dx = hv[(e + 1) % n, 0] - hv[e, 0]
        dy = hv[(e + 1) % n, 1] - hv[e, 1]
        length = sqrt(dx * dx + dy * dy)
        ux = dx / length
        uy = dy / length
        lo_a = hi_a = hv[0, 0] * ux + hv[0, 1] * uy
        lo_c = hi_c = -hv[0, 0] * uy + hv[0, 1] * ux
        for k in range(1, n):
            al = hv[k, 0] * ux + hv[k, 1] * uy
            ac = -hv[k, 0] * uy + hv[k, 1] * ux
            if al < lo_a:
                lo_a = al
            if al > hi_a:
                hi_a = al
            if ac < lo_c:
                lo_c = ac
            if ac > hi_c:
                hi_c = ac
        area = (hi_a - lo_a) * (hi_c - lo_c)
        if best_area < 0 or area < best_area:
            best_area = area
            ma = 0.5 * (lo_a + hi_a)
            mc = 0.5 * (lo_c + hi_c)
            bcx = ma * ux - mc * uy
            bcy = ma * uy + mc * ux
            bw = hi_a - lo_a
            bh = hi_c - lo_c
            bth = atan2(uy, ux)
    return float(bcx), float(bcy), float(bw), float(bh), float(bth)
