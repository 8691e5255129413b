"""Occlusion-aware projection of image features onto a point cloud.

Images are ``(H, W, C)`` float arrays and masks ``(H, W)`` bool arrays, both
row-major with pixel (r, c) centered at (u, v) = (c, r). Point radii are
given in NDC units, where [-1, 1] spans the shorter image side.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pcdiff import kernels
from pcdiff.geometry import CameraView, PointCloud

DEFAULT_RADIUS = 0.0075


@dataclass
class RasterResult:
    point_index: np.ndarray  # (H, W) int64, -1 where no point
    depth: np.ndarray        # (H, W) float64, inf where no point

    @property
    def covered(self) -> np.ndarray:
        return self.point_index >= 0


@dataclass
class ConditionedCloud:
    positions: np.ndarray  # (N, 3)
    features: np.ndarray   # (N, C + 3): image channels, mask bit, (drow, dcol)


def _positions(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.positions
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


def radius_in_pixels(camera: CameraView, radius_ndc: float) -> float:
    return radius_ndc * min(camera.width, camera.height) / 2.0


def rasterize(cloud, camera: CameraView, radius_ndc: float = DEFAULT_RADIUS) -> RasterResult:
    """Splat points as disks into a one-point-per-pixel z-buffer."""
    if radius_ndc <= 0:
        raise ValueError("radius must be positive")
    u, v, depth, valid = camera.project(_positions(cloud))
    index, zbuf = kernels.splat_zbuffer(
        np.ascontiguousarray(u), np.ascontiguousarray(v), np.ascontiguousarray(depth),
        np.ascontiguousarray(valid, dtype=np.uint8), radius_in_pixels(camera, radius_ndc),
        camera.height, camera.width)
    return RasterResult(index, zbuf)


def nearest_mask_pixels(mask) -> tuple[np.ndarray, np.ndarray]:
    """Row and column of the nearest set pixel for every pixel (ties: smaller row, then column)."""
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    if not mask.any():
        raise ValueError("mask is empty; no nearest mask pixel exists")
    return kernels.nearest_mask_pixel(mask)


def mask_distance_field(mask) -> np.ndarray:
    """(H, W, 2) displacement (drow, dcol) from each pixel to its nearest mask pixel."""
    near_r, near_c = nearest_mask_pixels(mask)
    h, w = near_r.shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return np.stack([near_r - rows, near_c - cols], axis=-1).astype(np.float64)


def _check_inputs(camera, features, mask):
    features = np.asarray(features, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if features.ndim != 3:
        raise ValueError("feature image must be (H, W, C)")
    if features.shape[:2] != (camera.height, camera.width):
        raise ValueError(f"feature image {features.shape[:2]} does not match camera "
                         f"{(camera.height, camera.width)}")
    if mask.shape != (camera.height, camera.width):
        raise ValueError(f"mask {mask.shape} does not match camera {(camera.height, camera.width)}")
    return features, mask


def pixel_table(features, mask, distance_field=None, drop_distance=False) -> np.ndarray:
    """Per-pixel conditioning rows [features, mask bit, drow, dcol] as (H*W, C + 3)."""
    features = np.asarray(features, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if distance_field is None:
        distance_field = mask_distance_field(mask)
    if drop_distance:
        distance_field = np.zeros_like(distance_field)
    table = np.concatenate([features, mask[..., None].astype(np.float64), distance_field], axis=-1)
    return table.reshape(-1, table.shape[-1])


def condition(cloud, camera: CameraView, features, mask, radius_ndc: float = DEFAULT_RADIUS,
              *, table=None, distance_field=None, drop_distance=False) -> ConditionedCloud:
    """Attach to each visible point the conditioning row of the pixel it wins.

    A point covering several pixels takes the one whose center is closest to
    its projection (ties: lowest pixel index). Occluded and unprojected
    points get all-zero rows. ``table`` may carry a precomputed
    :func:`pixel_table` to skip the distance transform.
    """
    pos = _positions(cloud)
    features, mask = _check_inputs(camera, features, mask)
    if table is None:
        table = pixel_table(features, mask, distance_field, drop_distance)
    out = np.zeros((len(pos), table.shape[1]))
    pixel = winning_pixels(pos, camera, radius_ndc)
    seen = pixel >= 0
    out[seen] = table[pixel[seen]]
    return ConditionedCloud(pos.copy(), out)


def winning_pixels(pos, camera: CameraView, radius_ndc: float) -> np.ndarray:
    """Flat pixel id each point is visible at, or -1."""
    ras = rasterize(pos, camera, radius_ndc)
    flat = ras.point_index.ravel()
    pix = np.flatnonzero(flat >= 0)
    owner = flat[pix]
    result = np.full(len(pos), -1, dtype=np.int64)
    if pix.size == 0:
        return result
    u, v, _, _ = camera.project(pos[owner])
    d2 = (pix % camera.width - u) ** 2 + (pix // camera.width - v) ** 2
    order = np.lexsort((pix, d2, owner))
    owner, pix = owner[order], pix[order]
    first = np.ones(owner.size, dtype=bool)
    first[1:] = owner[1:] != owner[:-1]
    result[owner[first]] = pix[first]
    return result


def condition_naive(cloud, camera: CameraView, features, mask, *, table=None,
                    distance_field=None, drop_distance=False) -> ConditionedCloud:
    """Ablation: every point in front of the camera samples its nearest pixel, ignoring occlusion."""
    pos = _positions(cloud)
    features, mask = _check_inputs(camera, features, mask)
    if table is None:
        table = pixel_table(features, mask, distance_field, drop_distance)
    out = np.zeros((len(pos), table.shape[1]))
    pixel = nearest_pixels(pos, camera)
    seen = pixel >= 0
    out[seen] = table[pixel[seen]]
    return ConditionedCloud(pos.copy(), out)


def nearest_pixels(pos, camera: CameraView) -> np.ndarray:
    """Flat id of the pixel whose center is nearest each projection, or -1 when out of frame."""
    u, v, _, valid = camera.project(pos)
    c = np.floor(u + 0.5)
    r = np.floor(v + 0.5)
    ok = valid & (c >= 0) & (c < camera.width) & (r >= 0) & (r < camera.height)
    return np.where(ok, r * camera.width + c, -1).astype(np.int64)
