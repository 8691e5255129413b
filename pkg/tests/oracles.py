"""Slow, obviously-correct reference implementations used by the tests."""
import numpy as np


def painter_raster(u, v, depth, valid, radius_px, h, w):
    """Test every (pixel, point) pair; nearest depth wins, ties to the lower index."""
    index = np.full((h, w), -1, dtype=np.int64)
    zbuf = np.full((h, w), np.inf)
    for r in range(h):
        for c in range(w):
            for i in range(len(u)):
                if not valid[i]:
                    continue
                if (c - u[i]) ** 2 + (r - v[i]) ** 2 <= radius_px ** 2 and depth[i] < zbuf[r, c]:
                    zbuf[r, c] = depth[i]
                    index[r, c] = i
    return index, zbuf


def painter_raster_fast(u, v, depth, valid, radius_px, h, w):
    """Same rule, vectorized over pixels: paint points far-to-near so nearer points overwrite."""
    index = np.full((h, w), -1, dtype=np.int64)
    zbuf = np.full((h, w), np.inf)
    rows, cols = np.mgrid[0:h, 0:w]
    # descending depth, then descending index, so the last write is (min depth, min index)
    order = sorted(np.flatnonzero(valid), key=lambda i: (-depth[i], -i))
    for i in order:
        cover = (cols - u[i]) ** 2 + (rows - v[i]) ** 2 <= radius_px ** 2
        index[cover] = i
        zbuf[cover] = depth[i]
    return index, zbuf


def brute_nearest_mask(mask):
    """Nearest set pixel per pixel; ties to smaller row then column."""
    h, w = mask.shape
    pr, pc = np.nonzero(mask)  # row-major order, so argmin picks the tie-break winner
    rows, cols = np.mgrid[0:h, 0:w]
    d2 = (rows.ravel()[:, None] - pr[None]) ** 2 + (cols.ravel()[:, None] - pc[None]) ** 2
    best = np.argmin(d2, axis=1)
    return pr[best].reshape(h, w), pc[best].reshape(h, w)


def brute_nn(points, queries):
    d2 = ((queries[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    ids = np.argmin(d2, axis=1)
    return ids, np.sqrt(d2[np.arange(len(queries)), ids])


def brute_fscore(pred, gt, tau):
    d = np.sqrt(((pred[:, None, :] - gt[None, :, :]) ** 2).sum(-1))
    p = float(np.mean(d.min(axis=1) <= tau))
    r = float(np.mean(d.min(axis=0) <= tau))
    return p, r, (0.0 if p + r == 0 else 2 * p * r / (p + r))


def brute_chamfer(a, b):
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def trilinear(grid, point):
    """Interpolate an (R, R, R, K) grid at one point, written out corner by corner."""
    R = grid.shape[0]
    g = [min(max(point[a] + 0.5, 0.0), 1.0) * (R - 1) for a in range(3)]
    base = [min(int(np.floor(x)), R - 2) for x in g]
    out = np.zeros(grid.shape[-1])
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                wgt = 1.0
                for a, d in enumerate((dx, dy, dz)):
                    f = g[a] - base[a]
                    wgt *= f if d else 1.0 - f
                out += wgt * grid[base[0] + dx, base[1] + dy, base[2] + dz]
    return out


def conditional_eps(x0, eps, abar, x, width):
    """Monte Carlo E[eps | x_t in [x - width, x + width]] for 1-D forward samples."""
    xt = np.sqrt(abar) * x0 + np.sqrt(1 - abar) * eps
    near = np.abs(xt - x) <= width
    return eps[near].mean(), int(near.sum())
