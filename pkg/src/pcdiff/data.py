"""Procedural toy dataset: primitive shapes, renders, masks, cameras, manifests.

Each record holds a ground-truth cloud (normalized to the unit box), an RGB
render with flat albedo and depth shading, the exact coverage mask and the
camera. Shapes are normalized with their analytic bounding box so the dense
render cloud and the sparse GT cloud share one frame.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from pcdiff import io
from pcdiff.geometry import CameraView, PointCloud, orbit_camera
from pcdiff.projection import rasterize

FAMILIES = ("sphere", "box", "cylinder", "composite")
FAMILY_ALBEDO = {
    "sphere": (0.85, 0.25, 0.2),
    "box": (0.2, 0.7, 0.3),
    "cylinder": (0.25, 0.35, 0.9),
    "composite": (0.9, 0.8, 0.2),
}
RENDER_RADIUS = 0.015
BACKGROUND = 0.0


@dataclass
class Primitive:
    kind: str                 # sphere | box | cylinder
    size: tuple               # sphere (r,), box (hx, hy, hz), cylinder (r, half_height)
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.kind = str(self.kind)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(3)
        self.size = tuple(float(s) for s in self.size)
        need = {"sphere": 1, "box": 3, "cylinder": 2}
        if self.kind not in need:
            raise ValueError(f"unknown primitive {self.kind!r}")
        if len(self.size) != need[self.kind] or min(self.size) <= 0:
            raise ValueError(f"{self.kind} needs {need[self.kind]} positive size parameters")
        if np.abs(self.rotation.T @ self.rotation - np.eye(3)).max() > 1e-9:
            raise ValueError("primitive rotation is not orthonormal")

    def area(self) -> float:
        s = self.size
        if self.kind == "sphere":
            return 4 * np.pi * s[0] ** 2
        if self.kind == "box":
            hx, hy, hz = s
            return 8 * (hx * hy + hy * hz + hx * hz)
        r, hh = s
        return 2 * np.pi * r * (2 * hh) + 2 * np.pi * r ** 2

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact axis-aligned bounding box of the posed surface."""
        R, s = self.rotation, self.size
        if self.kind == "sphere":
            ext = np.full(3, s[0])
        elif self.kind == "box":
            ext = np.abs(R) @ np.array(s)
        else:
            axis = R[:, 2]
            ext = s[1] * np.abs(axis) + s[0] * np.sqrt(np.clip(1 - axis ** 2, 0, None))
        return self.offset - ext, self.offset + ext

    def sample(self, n: int, rng) -> np.ndarray:
        """Uniform area-weighted surface samples in the posed frame."""
        s = self.size
        if self.kind == "sphere":
            d = rng.standard_normal((n, 3))
            local = s[0] * d / np.linalg.norm(d, axis=1, keepdims=True)
        elif self.kind == "box":
            hx, hy, hz = s
            areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
            face = rng.choice(6, size=n, p=areas / areas.sum())
            uv = rng.uniform(-1, 1, (n, 2))
            local = np.empty((n, 3))
            axis = face // 2
            sign = np.where(face % 2, 1.0, -1.0)
            half = np.array(s)
            for a in range(3):
                sel = axis == a
                others = [b for b in range(3) if b != a]
                local[sel, a] = sign[sel] * half[a]
                local[sel, others[0]] = uv[sel, 0] * half[others[0]]
                local[sel, others[1]] = uv[sel, 1] * half[others[1]]
        else:
            r, hh = s
            side, cap = 2 * np.pi * r * 2 * hh, np.pi * r ** 2
            part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
            theta = rng.uniform(0, 2 * np.pi, n)
            rad = np.where(part == 0, r, r * np.sqrt(rng.uniform(0, 1, n)))
            z = np.where(part == 0, rng.uniform(-hh, hh, n), np.where(part == 1, -hh, hh))
            local = np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1)
        return local @ self.rotation.T + self.offset

    def to_dict(self):
        return {"kind": self.kind, "size": list(self.size),
                "rotation": self.rotation.ravel().tolist(), "offset": self.offset.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["size"]), np.array(d["rotation"]), np.array(d["offset"]))


@dataclass
class ToyShapeSpec:
    family: str
    parts: list
    albedo: tuple = (0.7, 0.7, 0.7)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown shape family {self.family!r}")
        if not self.parts:
            raise ValueError("shape needs at least one primitive")
        self.albedo = tuple(float(a) for a in self.albedo)
        if len(self.albedo) != 3 or not all(0.0 <= a <= 1.0 for a in self.albedo):
            raise ValueError("albedo must be three values in [0, 1]")

    def bounds(self):
        los, his = zip(*(p.bounds() for p in self.parts))
        return np.min(los, axis=0), np.max(his, axis=0)

    def normalization(self) -> tuple[float, np.ndarray]:
        lo, hi = self.bounds()
        return 1.0 / float((hi - lo).max()), (lo + hi) / 2

    def to_dict(self):
        return {"family": self.family, "albedo": list(self.albedo),
                "parts": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], [Primitive.from_dict(p) for p in d["parts"]], tuple(d["albedo"]))


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_spec(family: str, rng, albedo_mode: str = "random") -> ToyShapeSpec:
    """Draw size and pose parameters for one instance of ``family``."""
    def prim(kind, offset=(0.0, 0.0, 0.0)):
        if kind == "sphere":
            size = (rng.uniform(0.2, 0.5),)
        elif kind == "box":
            size = tuple(rng.uniform(0.1, 0.5, 3))
        else:
            size = (rng.uniform(0.1, 0.35), rng.uniform(0.1, 0.5))
        return Primitive(kind, size, random_rotation(rng), np.asarray(offset))

    if family == "composite":
        kinds = rng.choice(["sphere", "box", "cylinder"], size=2)
        d = rng.standard_normal(3)
        d *= rng.uniform(0.25, 0.45) / np.linalg.norm(d)
        parts = [prim(kinds[0], -d), prim(kinds[1], d)]
    elif family in FAMILIES:
        parts = [prim(family)]
    else:
        raise ValueError(f"unknown shape family {family!r}")
    if albedo_mode == "family":
        albedo = FAMILY_ALBEDO[family]
    elif albedo_mode == "random":
        albedo = tuple(rng.uniform(0.2, 1.0, 3))
    else:
        raise ValueError(f"unknown albedo mode {albedo_mode!r}")
    return ToyShapeSpec(family, parts, albedo)


def sample_surface(spec: ToyShapeSpec, n: int, rng) -> np.ndarray:
    """Area-weighted samples across all primitives, unnormalized."""
    if n < 1:
        raise ValueError("need n >= 1")
    areas = np.array([p.area() for p in spec.parts])
    which = rng.choice(len(spec.parts), size=n, p=areas / areas.sum())
    out = np.empty((n, 3))
    for k, p in enumerate(spec.parts):
        sel = which == k
        out[sel] = p.sample(int(sel.sum()), rng)
    return out


def generate_shape(spec: ToyShapeSpec, n: int, seed) -> PointCloud:
    """n surface points normalized to the unit box, colored with the albedo."""
    rng = np.random.default_rng(seed)
    scale, center = spec.normalization()
    pts = (sample_surface(spec, n, rng) - center) * scale
    return PointCloud(pts, np.tile(spec.albedo, (n, 1)))


def shade(cloud: PointCloud, camera: CameraView, radius_ndc: float = RENDER_RADIUS):
    """Flat-colored splat render with depth shading; returns (image, mask).

    Covered pixels get color * (0.4 + 0.6 * (1 - d)) with d the depth
    normalized over covered pixels; the rest is background.
    """
    ras = rasterize(cloud, camera, radius_ndc)
    mask = ras.covered
    h, w = mask.shape
    image = np.full((h, w, 3), BACKGROUND)
    if mask.any():
        z = ras.depth[mask]
        span = z.max() - z.min()
        nd = (z - z.min()) / span if span > 0 else np.zeros_like(z)
        colors = cloud.colors if cloud.colors is not None else np.ones((len(cloud), 3))
        image[mask] = colors[ras.point_index[mask]] * (0.4 + 0.6 * (1 - nd))[:, None]
    return image, mask


@dataclass
class Record:
    id: str
    family: str
    cloud: PointCloud
    image: np.ndarray
    mask: np.ndarray
    camera: CameraView
    split: str = "train"


def sample_camera(rng, image_size: int = 137, radius: float = 1.8, focal: float = 100.0,
                  elevation_deg=(10.0, 50.0)) -> CameraView:
    az = rng.uniform(0, 2 * np.pi)
    el = np.deg2rad(rng.uniform(*elevation_deg))
    c = (image_size - 1) / 2
    return orbit_camera(az, el, radius, fx=focal, fy=focal, cx=c, cy=c,
                        width=image_size, height=image_size)


def render_record(spec: ToyShapeSpec, camera: CameraView, rec_id: str, seed, n_points: int = 512,
                  dense_factor: int = 32, radius_ndc: float = RENDER_RADIUS) -> Record:
    """Dense-sample the surface, render image and mask, and draw the GT cloud."""
    if dense_factor < 16:
        raise ValueError("dense cloud must have at least 16x the GT point count")
    rng = np.random.default_rng(seed)
    scale, center = spec.normalization()
    dense_pts = (sample_surface(spec, n_points * dense_factor, rng) - center) * scale
    dense = PointCloud(dense_pts, np.tile(spec.albedo, (len(dense_pts), 1)))
    image, mask = shade(dense, camera, radius_ndc)
    gt_pts = (sample_surface(spec, n_points, rng) - center) * scale
    gt = PointCloud(gt_pts, np.tile(spec.albedo, (n_points, 1)))
    return Record(rec_id, spec.family, gt, image, mask, camera)


# ---------------------------------------------------------------- files

def write_record(rec: Record, root) -> dict:
    d = os.path.join(root, "records", rec.id)
    os.makedirs(d, exist_ok=True)
    io.ply_write(os.path.join(d, "cloud.ply"), rec.cloud)
    io.ppm_write(os.path.join(d, "image.ppm"), rec.image)
    io.pgm_write(os.path.join(d, "mask.pgm"), rec.mask)
    io.atomic_write(os.path.join(d, "camera.json"), rec.camera.to_json())
    rel = f"records/{rec.id}/"
    return {"id": rec.id, "family": rec.family, "split": rec.split,
            "cloud": rel + "cloud.ply", "image": rel + "image.ppm",
            "mask": rel + "mask.pgm", "camera": rel + "camera.json"}


def read_record(entry: dict, root) -> Record:
    p = lambda k: os.path.join(root, entry[k])  # noqa: E731
    with open(p("camera")) as fh:
        cam = CameraView.from_json(fh.read())
    rec = Record(entry["id"], entry.get("family", ""), io.ply_read(p("cloud")), io.ppm_read(p("image")),
                 io.pgm_read(p("mask")), cam, entry.get("split", "train"))
    if rec.image.shape[:2] != rec.mask.shape or rec.mask.shape != (cam.height, cam.width):
        raise io.FormatError(f"record {rec.id}: image, mask and camera sizes disagree")
    return rec


@dataclass
class DataConfig:
    families: tuple = ("sphere", "box", "cylinder")
    instances: int = 200
    image_size: int = 137
    points: int = 512
    dense_factor: int = 32
    render_radius: float = RENDER_RADIUS
    albedo: str = "random"
    eval_fraction: float = 0.1
    camera_radius: float = 1.8
    focal: float = 100.0


def generate_dataset(cfg: DataConfig, seed: int) -> list[tuple[ToyShapeSpec, Record]]:
    """All records in manifest order; per-record streams come from (seed, family, instance)."""
    out = []
    n_eval = int(round(cfg.instances * cfg.eval_fraction))
    for fi, fam in enumerate(cfg.families):
        for i in range(cfg.instances):
            rng = np.random.default_rng([seed, FAMILIES.index(fam), i])
            spec = random_spec(fam, rng, cfg.albedo)
            cam = sample_camera(rng, cfg.image_size, cfg.camera_radius, cfg.focal)
            rec = render_record(spec, cam, f"{fam}-{i:04d}", rng.integers(2 ** 63),
                                cfg.points, cfg.dense_factor, cfg.render_radius)
            rec.split = "eval" if i >= cfg.instances - n_eval else "train"
            out.append((spec, rec))
    return out


def write_dataset(cfg: DataConfig, seed: int, root) -> str:
    """Generate and write every record plus ``manifest.json``; returns the manifest path."""
    os.makedirs(root, exist_ok=True)
    entries = [write_record(rec, root) for _, rec in generate_dataset(cfg, seed)]
    path = os.path.join(root, "manifest.json")
    io.atomic_write(path, json.dumps(entries, indent=1) + "\n")
    return path


def load_manifest(path, split: str | None = None) -> list[Record]:
    with open(path) as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise io.FormatError(f"{path}: manifest must be a JSON array")
    root = os.path.dirname(os.path.abspath(path))
    return [read_record(e, root) for e in entries if split is None or e.get("split") == split]
