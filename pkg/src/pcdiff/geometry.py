"""Cameras, point clouds and pixel math.

Conventions: camera frame looks down +z; pixel (0, 0) is the top-left pixel,
whose center sits at (u, v) = (0, 0); u grows rightward, v downward.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

DEPTH_EPS = 1e-6


@dataclass
class PointCloud:
    """N points with optional per-point RGB in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) < 1:
            raise ValueError("point cloud needs at least one point")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("point positions must be finite")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.positions):
                raise ValueError("colors and positions differ in length")

    def __len__(self):
        return len(self.positions)


@dataclass
class CameraView:
    """Pinhole camera; ``rotation``/``translation`` map world to camera frame."""

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3g})")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        self.width, self.height = int(self.width), int(self.height)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def project(self, points):
        """Vectorized projection. Returns (u, v, depth, valid)."""
        q = np.asarray(points, dtype=np.float64).reshape(-1, 3) @ self.rotation.T + self.translation
        depth = q[:, 2]
        valid = depth > DEPTH_EPS
        safe = np.where(valid, depth, 1.0)
        u = self.fx * q[:, 0] / safe + self.cx
        v = self.fy * q[:, 1] / safe + self.cy
        return u, v, depth, valid

    def to_dict(self) -> dict:
        return {
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
            "fx": float(self.fx), "fy": float(self.fy),
            "cx": float(self.cx), "cy": float(self.cy),
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CameraView:
        return cls(np.array(d["rotation"]).reshape(3, 3), np.array(d["translation"]),
                   d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> CameraView:
        return cls.from_dict(json.loads(text))


def project_point(camera: CameraView, p) -> tuple[float, float, float] | None:
    """Pixel coordinates and depth of one world point, or None if behind the camera."""
    q = camera.rotation @ np.asarray(p, dtype=np.float64) + camera.translation
    if q[2] <= DEPTH_EPS:
        return None
    return (camera.fx * q[0] / q[2] + camera.cx, camera.fy * q[1] / q[2] + camera.cy, float(q[2]))


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0), *, fx, fy, cx, cy, width, height) -> CameraView:
    """Camera at ``eye`` looking at ``target`` with world ``up`` mapped to image-up."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-12:  # looking along up
        right = np.cross(fwd, (1.0, 0.0, 0.0) if abs(fwd[0]) < 0.9 else (0.0, 1.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    return CameraView(rot, -rot @ eye, fx, fy, cx, cy, width, height)


def orbit_camera(azimuth, elevation, radius, **intrinsics) -> CameraView:
    """Camera on a sphere around the origin; angles in radians, z is up."""
    eye = radius * np.array([np.cos(elevation) * np.cos(azimuth),
                             np.cos(elevation) * np.sin(azimuth),
                             np.sin(elevation)])
    return look_at(eye, **intrinsics)


class Normalized(NamedTuple):
    cloud: PointCloud
    scale: float
    center: np.ndarray
    degenerate: bool


def normalize_cloud(cloud: PointCloud) -> Normalized:
    """Center at the bounding-box center and scale the longest side to 1.

    The transform is ``p' = (p - center) * scale``.
    """
    pos = cloud.positions
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    center = (lo + hi) / 2
    side = float((hi - lo).max())
    degenerate = side == 0.0
    scale = 1.0 if degenerate else 1.0 / side
    out = PointCloud((pos - center) * scale, None if cloud.colors is None else cloud.colors.copy())
    return Normalized(out, scale, center, degenerate)
