# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: point splatting, exact distance transform, grid NN.

Every function here has a pure-Python twin in ``_fallback`` with the same
signature and bit-identical results.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, sqrt, INFINITY

cnp.import_array()


def splat_zbuffer(double[::1] u, double[::1] v, double[::1] depth,
                  cnp.uint8_t[::1] valid, double radius_px, int height, int width):
    """Z-buffer disk splat. Returns (index[H, W] int64, depth[H, W] float64).

    Pixel (r, c) has its center at (u=c, v=r). A point covers the pixel when
    the squared center distance is <= radius_px**2. Ties on depth keep the
    lower point index.
    """
    cdef Py_ssize_t n = u.shape[0]
    index = np.full((height, width), -1, dtype=np.int64)
    zbuf = np.full((height, width), np.inf, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] idx = index
    cdef double[:, ::1] zb = zbuf
    cdef double r2 = radius_px * radius_px
    cdef Py_ssize_t i
    cdef int r, c, r0, r1, c0, c1
    cdef double du, dv, d
    for i in range(n):
        if not valid[i]:
            continue
        c0 = <int>ceil(u[i] - radius_px)
        c1 = <int>floor(u[i] + radius_px)
        r0 = <int>ceil(v[i] - radius_px)
        r1 = <int>floor(v[i] + radius_px)
        if c0 < 0:
            c0 = 0
        if r0 < 0:
            r0 = 0
        if c1 > width - 1:
            c1 = width - 1
        if r1 > height - 1:
            r1 = height - 1
        d = depth[i]
        for r in range(r0, r1 + 1):
            dv = r - v[i]
            for c in range(c0, c1 + 1):
                du = c - u[i]
                if du * du + dv * dv <= r2 and d < zb[r, c]:
                    zb[r, c] = d
                    idx[r, c] = i
    return index, zbuf


def nearest_mask_pixel(cnp.uint8_t[:, ::1] mask):
    """Exact nearest set pixel for every pixel, as (row[H, W], col[H, W]).

    Two passes (per column, then per row with a lower envelope of parabolas).
    The envelope minimizes the integer key  H*W*d2 + W*row + col, so equal
    distances resolve to the smaller row, then the smaller column.
    Columns without any set pixel are skipped; an empty mask yields -1.
    """
    cdef int h = mask.shape[0]
    cdef int w = mask.shape[1]
    cdef double hw = <double>h * <double>w
    near_row = np.full((h, w), -1, dtype=np.int64)
    near_col = np.full((h, w), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] nr = near_row
    cdef cnp.int64_t[:, ::1] nc = near_col
    col_row_np = np.full((h, w), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] col_row = col_row_np
    cdef int r, c, prev, nxt, k, q
    cdef double s

    # pass 1: nearest set row within each column (ties -> upper row)
    for c in range(w):
        prev = -1
        for r in range(h):
            if mask[r, c]:
                prev = r
            col_row[r, c] = prev
        nxt = -1
        for r in range(h - 1, -1, -1):
            if mask[r, c]:
                nxt = r
            if nxt >= 0 and (col_row[r, c] < 0 or nxt - r < r - col_row[r, c]):
                col_row[r, c] = nxt

    verts_np = np.zeros(w, dtype=np.int64)
    bounds_np = np.zeros(w + 1, dtype=np.float64)
    fvals_np = np.zeros(w, dtype=np.float64)
    cdef cnp.int64_t[::1] verts = verts_np
    cdef double[::1] bounds = bounds_np
    cdef double[::1] f = fvals_np

    # pass 2: lower envelope of hw*(c - q)^2 + f(q) along each row
    for r in range(h):
        for q in range(w):
            if col_row[r, q] >= 0:
                f[q] = hw * (r - col_row[r, q]) * (r - col_row[r, q]) + w * col_row[r, q] + q
            else:
                f[q] = INFINITY
        k = -1
        for q in range(w):
            if f[q] == INFINITY:
                continue
            if k < 0:
                k = 0
                verts[0] = q
                bounds[0] = -INFINITY
                bounds[1] = INFINITY
                continue
            s = _meet(f, verts[k], q, hw)
            while s <= bounds[k]:
                k -= 1
                s = _meet(f, verts[k], q, hw)
            k += 1
            verts[k] = q
            bounds[k] = s
            bounds[k + 1] = INFINITY
        if k < 0:
            continue
        k = 0
        for c in range(w):
            while bounds[k + 1] < c:
                k += 1
            nc[r, c] = verts[k]
            nr[r, c] = col_row[r, verts[k]]
    return near_row, near_col


def grid_nearest(double[:, ::1] pts, cnp.int64_t[::1] ids, cnp.int64_t[::1] cell_start,
                 double[::1] origin, double h, cnp.int64_t[::1] dims,
                 double[:, ::1] queries):
    """Exact nearest neighbor via expanding Chebyshev shells of grid cells.

    ``pts``/``ids`` are sorted by cell; cell ``k`` owns ``cell_start[k]:cell_start[k+1]``.
    Equidistant candidates resolve to the lowest id.
    Returns (ids[M] int64, squared distances[M] float64).
    """
    cdef Py_ssize_t m = queries.shape[0]
    out_id_np = np.full(m, -1, dtype=np.int64)
    out_d2_np = np.full(m, np.inf, dtype=np.float64)
    cdef cnp.int64_t[::1] out_id = out_id_np
    cdef double[::1] out_d2 = out_d2_np
    cdef Py_ssize_t j, p
    cdef long nx = dims[0], ny = dims[1], nz = dims[2]
    cdef long cx, cy, cz, k, x, y, z, x0, x1, y0, y1, z0, z1, zstep, cell
    cdef double qx, qy, qz, best, d2, dx, dy, dz, lb, face
    cdef long best_id
    cdef bint full
    for j in range(m):
        qx = queries[j, 0]
        qy = queries[j, 1]
        qz = queries[j, 2]
        cx = _clampcell(qx, origin[0], h, nx)
        cy = _clampcell(qy, origin[1], h, ny)
        cz = _clampcell(qz, origin[2], h, nz)
        best = INFINITY
        best_id = -1
        k = 0
        while True:
            x0 = cx - k
            x1 = cx + k
            y0 = cy - k
            y1 = cy + k
            for x in range(x0 if x0 > 0 else 0, (x1 if x1 < nx - 1 else nx - 1) + 1):
                for y in range(y0 if y0 > 0 else 0, (y1 if y1 < ny - 1 else ny - 1) + 1):
                    if x == x0 or x == x1 or y == y0 or y == y1:
                        z0 = cz - k
                        zstep = 1
                    else:
                        z0 = cz - k
                        zstep = 2 * k if k > 0 else 1
                    z = z0
                    while z <= cz + k:
                        if 0 <= z < nz:
                            cell = (x * ny + y) * nz + z
                            for p in range(cell_start[cell], cell_start[cell + 1]):
                                dx = pts[p, 0] - qx
                                dy = pts[p, 1] - qy
                                dz = pts[p, 2] - qz
                                d2 = dx * dx + dy * dy + dz * dz
                                if d2 < best or (d2 == best and ids[p] < best_id):
                                    best = d2
                                    best_id = ids[p]
                        z += zstep
            # distance from q to any cell outside the examined block
            lb = INFINITY
            full = True
            if cx - k > 0:
                full = False
                face = qx - (origin[0] + (cx - k) * h)
                lb = face if face < lb else lb
            if cx + k < nx - 1:
                full = False
                face = (origin[0] + (cx + k + 1) * h) - qx
                lb = face if face < lb else lb
            if cy - k > 0:
                full = False
                face = qy - (origin[1] + (cy - k) * h)
                lb = face if face < lb else lb
            if cy + k < ny - 1:
                full = False
                face = (origin[1] + (cy + k + 1) * h) - qy
                lb = face if face < lb else lb
            if cz - k > 0:
                full = False
                face = qz - (origin[2] + (cz - k) * h)
                lb = face if face < lb else lb
            if cz + k < nz - 1:
                full = False
                face = (origin[2] + (cz + k + 1) * h) - qz
                lb = face if face < lb else lb
            if full:
                break
            # guard against the cell assignment rounding across a face
            lb -= 1e-9 * h
            if lb < 0:
                lb = 0
            if best_id >= 0 and best < lb * lb:
                break
            k += 1
        out_id[j] = best_id
        out_d2[j] = best
    return out_id_np, out_d2_np


def grid_within(double[:, ::1] pts, cnp.int64_t[::1] cell_start, double[::1] origin,
                double h, cnp.int64_t[::1] dims, double[:, ::1] queries, double radius):
    """For each query, whether any indexed point lies within ``radius`` (inclusive)."""
    cdef Py_ssize_t m = queries.shape[0]
    hit_np = np.zeros(m, dtype=np.uint8)
    cdef cnp.uint8_t[::1] hit = hit_np
    cdef Py_ssize_t j, p
    cdef long nx = dims[0], ny = dims[1], nz = dims[2]
    cdef long x, y, z, xa, xb, ya, yb, za, zb, cell
    cdef double qx, qy, qz, dx, dy, dz, r2 = radius * radius
    cdef double reach = radius + 1e-9 * h
    cdef bint found
    for j in range(m):
        qx = queries[j, 0]
        qy = queries[j, 1]
        qz = queries[j, 2]
        xa = _clampcell(qx - reach, origin[0], h, nx)
        xb = _clampcell(qx + reach, origin[0], h, nx)
        ya = _clampcell(qy - reach, origin[1], h, ny)
        yb = _clampcell(qy + reach, origin[1], h, ny)
        za = _clampcell(qz - reach, origin[2], h, nz)
        zb = _clampcell(qz + reach, origin[2], h, nz)
        found = False
        x = xa
        while x <= xb and not found:
            y = ya
            while y <= yb and not found:
                z = za
                while z <= zb and not found:
                    cell = (x * ny + y) * nz + z
                    for p in range(cell_start[cell], cell_start[cell + 1]):
                        dx = pts[p, 0] - qx
                        dy = pts[p, 1] - qy
                        dz = pts[p, 2] - qz
                        if dx * dx + dy * dy + dz * dz <= r2:
                            found = True
                            break
                    z += 1
                y += 1
            x += 1
        hit[j] = found
    return hit_np.astype(bool)


cdef inline long _clampcell(double q, double o, double h, long n):
    cdef double f = floor((q - o) / h)
    if f < 0:
        return 0
    if f > n - 1:
        return n - 1
    return <long>f


cdef inline double _meet(double[::1] f, long p, long q, double hw):
    return ((f[q] + hw * q * q) - (f[p] + hw * p * p)) / (2.0 * hw * (q - p))
