"""F-score, Chamfer distance and the uniform-grid nearest-neighbor index."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from pcdiff import kernels
from pcdiff.geometry import PointCloud

MAX_CELLS = 1 << 22


def _as_points(cloud) -> np.ndarray:
    pts = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    pts = np.ascontiguousarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty point cloud")
    return pts


class NnIndex:
    """Uniform grid over the points' bounding box with per-cell point lists.

    Points are stored sorted by cell (counting sort), so each cell is a
    contiguous slice. ``cell_size`` defaults to roughly one point per cell;
    it may be enlarged to keep the grid under ``MAX_CELLS``.
    """

    def __init__(self, points, cell_size: float | None = None):
        pts = _as_points(points)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        extent = float((hi - lo).max())
        if cell_size is None:
            cell_size = max(extent, 1e-9) / max(np.cbrt(len(pts)), 1.0)
        h = float(cell_size)
        if h <= 0:
            raise ValueError("cell size must be positive")
        while np.prod(np.floor((hi - lo) / h) + 1) > MAX_CELLS:
            h *= 2.0
        dims = (np.floor((hi - lo) / h) + 1).astype(np.int64)
        cell = np.minimum(np.floor((pts - lo) / h).astype(np.int64), dims - 1)
        flat = (cell[:, 0] * dims[1] + cell[:, 1]) * dims[2] + cell[:, 2]
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=int(np.prod(dims)))
        self.cell_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.points = np.ascontiguousarray(pts[order])
        self.ids = order.astype(np.int64)
        self.origin = lo.astype(np.float64)
        self.cell_size = h
        self.dims = dims

    def __len__(self):
        return len(self.points)

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Nearest indexed point for each query: (ids, distances). Ties -> lowest id."""
        ids, d2 = self.query_sq(queries)
        return ids, np.sqrt(d2)

    def query_sq(self, queries) -> tuple[np.ndarray, np.ndarray]:
        q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
        ids, d2 = kernels.grid_nearest(self.points, self.ids, self.cell_start, self.origin,
                                       self.cell_size, self.dims, q)
        return np.asarray(ids), np.asarray(d2)

    def within(self, queries, radius: float) -> np.ndarray:
        """Whether each query has an indexed point at distance <= radius."""
        q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
        return np.asarray(kernels.grid_within(self.points, self.cell_start, self.origin,
                                              self.cell_size, self.dims, q, float(radius)))


def nn_query(index: NnIndex, q) -> tuple[int, float]:
    ids, dist = index.query(np.asarray(q, dtype=np.float64)[None])
    return int(ids[0]), float(dist[0])


class FScore(NamedTuple):
    precision: float
    recall: float
    f: float


def fscore(pred, gt, tau: float = 0.01) -> FScore:
    """Precision/recall of points within ``tau`` of the other cloud, and their harmonic mean."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    p, g = _as_points(pred), _as_points(gt)
    precision = float(NnIndex(g, tau).within(p, tau).mean())
    recall = float(NnIndex(p, tau).within(g, tau).mean())
    f = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return FScore(precision, recall, f)


def chamfer(a, b) -> float:
    """Mean squared nearest distance a->b plus b->a."""
    pa, pb = _as_points(a), _as_points(b)
    _, dab = NnIndex(pb).query_sq(pa)
    _, dba = NnIndex(pa).query_sq(pb)
    return float(np.mean(dab) + np.mean(dba))
