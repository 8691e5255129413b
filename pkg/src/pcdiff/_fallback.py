"""Pure numpy/Python versions of the compiled kernels in ``_kernels.pyx``.

Same signatures, same tie-breaking, same outputs. Used when the extension
is not built or when ``PCDIFF_PURE_PYTHON=1`` is set.
"""
import math

import numpy as np


def splat_zbuffer(u, v, depth, valid, radius_px, height, width):
    index = np.full((height, width), -1, dtype=np.int64)
    zbuf = np.full((height, width), np.inf, dtype=np.float64)
    ids = np.flatnonzero(np.asarray(valid, dtype=bool))
    if ids.size == 0:
        return index, zbuf
    u = np.asarray(u)[ids]
    v = np.asarray(v)[ids]
    d = np.asarray(depth)[ids]
    reach = int(math.ceil(radius_px)) + 1
    offs = np.arange(-reach, reach + 1)
    # candidate pixels around the rounded center, then the exact disk test
    cc = np.floor(u)[:, None, None] + offs[None, None, :]
    rr = np.floor(v)[:, None, None] + offs[None, :, None]
    du = cc - u[:, None, None]
    dv = rr - v[:, None, None]
    hit = (du * du + dv * dv <= radius_px * radius_px)
    hit &= (cc >= 0) & (cc < width) & (rr >= 0) & (rr < height)
    pt, ri, ci = np.nonzero(hit)
    if pt.size == 0:
        return index, zbuf
    pix = rr[pt, ri, 0].astype(np.int64) * width + cc[pt, 0, ci].astype(np.int64)
    order = np.lexsort((ids[pt], d[pt], pix))
    pix, pt = pix[order], pt[order]
    first = np.ones(pix.size, dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    index.ravel()[pix[first]] = ids[pt[first]]
    zbuf.ravel()[pix[first]] = d[pt[first]]
    return index, zbuf


def nearest_mask_pixel(mask):
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    hw = float(h) * float(w)
    near_row = np.full((h, w), -1, dtype=np.int64)
    near_col = np.full((h, w), -1, dtype=np.int64)
    rows = np.arange(h)

    # pass 1, vectorized over columns
    prev = np.where(mask, rows[:, None], -1)
    prev = np.maximum.accumulate(prev, axis=0)
    big = h + w + 1
    nxt = np.where(mask, rows[:, None], big)
    nxt = np.minimum.accumulate(nxt[::-1], axis=0)[::-1]
    use_next = (nxt < big) & ((prev < 0) | (nxt - rows[:, None] < rows[:, None] - prev))
    col_row = np.where(use_next, nxt, prev)

    # pass 2: lower envelope per row
    for r in range(h):
        f = [math.inf] * w
        for q in range(w):
            cr = int(col_row[r, q])
            if cr >= 0:
                f[q] = hw * (r - cr) * (r - cr) + w * cr + q
        verts = []
        bounds = []
        for q in range(w):
            if f[q] == math.inf:
                continue
            if not verts:
                verts.append(q)
                bounds = [-math.inf, math.inf]
                continue
            s = _meet(f, verts[-1], q, hw)
            while s <= bounds[len(verts) - 1]:
                verts.pop()
                bounds.pop()
                s = _meet(f, verts[-1], q, hw)
            bounds[len(verts)] = s
            verts.append(q)
            bounds.append(math.inf)
        if not verts:
            continue
        k = 0
        for c in range(w):
            while bounds[k + 1] < c:
                k += 1
            near_col[r, c] = verts[k]
            near_row[r, c] = col_row[r, verts[k]]
    return near_row, near_col


def _meet(f, p, q, hw):
    return ((f[q] + hw * q * q) - (f[p] + hw * p * p)) / (2.0 * hw * (q - p))


def _clampcell(q, o, h, n):
    f = math.floor((q - o) / h)
    return 0 if f < 0 else (n - 1 if f > n - 1 else int(f))


def grid_nearest(pts, ids, cell_start, origin, h, dims, queries):
    nx, ny, nz = (int(d) for d in dims)
    m = len(queries)
    out_id = np.full(m, -1, dtype=np.int64)
    out_d2 = np.full(m, np.inf, dtype=np.float64)
    for j in range(m):
        q = queries[j]
        c = [_clampcell(q[a], origin[a], h, n) for a, n in enumerate((nx, ny, nz))]
        best, best_id = math.inf, -1
        k = 0
        while True:
            lo = [max(c[a] - k, 0) for a in range(3)]
            hi = [min(c[a] + k, n - 1) for a, n in enumerate((nx, ny, nz))]
            gx, gy, gz = np.meshgrid(*(np.arange(lo[a], hi[a] + 1) for a in range(3)), indexing="ij")
            cheb = np.maximum(np.maximum(abs(gx - c[0]), abs(gy - c[1])), abs(gz - c[2]))
            shell = ((gx * ny + gy) * nz + gz)[cheb == k]
            for cell in shell:
                s, e = cell_start[cell], cell_start[cell + 1]
                if s == e:
                    continue
                d2 = np.sum((pts[s:e] - q) ** 2, axis=1)
                i = int(np.lexsort((ids[s:e], d2))[0])
                if d2[i] < best or (d2[i] == best and ids[s + i] < best_id):
                    best, best_id = float(d2[i]), int(ids[s + i])
            lb, full = math.inf, True
            for a, n in enumerate((nx, ny, nz)):
                if c[a] - k > 0:
                    full = False
                    lb = min(lb, q[a] - (origin[a] + (c[a] - k) * h))
                if c[a] + k < n - 1:
                    full = False
                    lb = min(lb, (origin[a] + (c[a] + k + 1) * h) - q[a])
            if full:
                break
            lb = max(lb - 1e-9 * h, 0.0)
            if best_id >= 0 and best < lb * lb:
                break
            k += 1
        out_id[j] = best_id
        out_d2[j] = best
    return out_id, out_d2


def grid_within(pts, cell_start, origin, h, dims, queries, radius):
    nx, ny, nz = (int(d) for d in dims)
    reach = radius + 1e-9 * h
    hit = np.zeros(len(queries), dtype=bool)
    for j, q in enumerate(queries):
        lo = [_clampcell(q[a] - reach, origin[a], h, n) for a, n in enumerate((nx, ny, nz))]
        hi = [_clampcell(q[a] + reach, origin[a], h, n) for a, n in enumerate((nx, ny, nz))]
        for x in range(lo[0], hi[0] + 1):
            for y in range(lo[1], hi[1] + 1):
                base = (x * ny + y) * nz
                s, e = cell_start[base + lo[2]], cell_start[base + hi[2] + 1]
                if s < e and np.any(np.sum((pts[s:e] - q) ** 2, axis=1) <= radius * radius):
                    hit[j] = True
                    break
            if hit[j]:
                break
    return hit
