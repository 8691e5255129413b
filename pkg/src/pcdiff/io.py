"""ASCII PLY point clouds, binary PPM/PGM images, atomic writes."""
from __future__ import annotations

import os
import tempfile

import numpy as np

from pcdiff.geometry import PointCloud


class FormatError(ValueError):
    pass


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write(path, data: bytes | str) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    if isinstance(data, str):
        data = data.encode()
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_umask())  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _to_u8(values, what):
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)) or values.min(initial=0) < 0 or values.max(initial=0) > 1:
        raise FormatError(f"{what} must lie in [0, 1]")
    return np.rint(values * 255).astype(np.uint8)


# ---------------------------------------------------------------- PLY

def ply_bytes(cloud: PointCloud) -> bytes:
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
             "property double x", "property double y", "property double z"]
    if cloud.colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
        rgb = _to_u8(cloud.colors, "colors")
    lines.append("end_header")
    body = []
    for i, p in enumerate(cloud.positions):
        row = "%.17g %.17g %.17g" % tuple(p)
        if cloud.colors is not None:
            row += " %d %d %d" % tuple(rgb[i])
        body.append(row)
    return ("\n".join(lines + body) + "\n").encode("ascii")


def ply_write(path, cloud: PointCloud) -> None:
    atomic_write(path, ply_bytes(cloud))


def ply_read(path) -> PointCloud:
    with open(path, "rb") as fh:
        text = fh.read().decode("ascii", errors="strict")
    lines = text.split("\n")
    if not lines or lines[0].strip() != "ply":
        raise FormatError(f"{path}: missing 'ply' magic")
    n, props, i = None, [], 1
    while True:
        if i >= len(lines):
            raise FormatError(f"{path}: header has no end_header")
        tok = lines[i].split()
        i += 1
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if tok[1:] != ["ascii", "1.0"]:
                raise FormatError(f"{path}: only ASCII PLY 1.0 is supported")
        elif tok[0] == "element":
            if tok[1] != "vertex" or n is not None:
                raise FormatError(f"{path}: expected a single vertex element")
            n = int(tok[2])
        elif tok[0] == "property":
            props.append(tok[-1])
        elif tok[0] == "end_header":
            break
        else:
            raise FormatError(f"{path}: bad header line {lines[i - 1]!r}")
    if n is None or props[:3] != ["x", "y", "z"] or props[3:] not in ([], ["red", "green", "blue"]):
        raise FormatError(f"{path}: need x y z [red green blue] vertex properties")
    rows = [ln.split() for ln in lines[i:] if ln.strip()]
    if len(rows) < n:
        raise FormatError(f"{path}: truncated, {len(rows)} of {n} vertices")
    if len(rows) > n:
        raise FormatError(f"{path}: trailing data after {n} vertices")
    if any(len(r) != len(props) for r in rows):
        raise FormatError(f"{path}: vertex rows must have {len(props)} values")
    try:
        data = np.array(rows, dtype=np.float64).reshape(n, len(props))
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric vertex data") from exc
    colors = None
    if len(props) == 6:
        rgb = data[:, 3:]
        if np.any(rgb < 0) or np.any(rgb > 255) or np.any(rgb != np.floor(rgb)):
            raise FormatError(f"{path}: colors must be integers in [0, 255]")
        colors = rgb / 255.0
    return PointCloud(data[:, :3], colors)


# ---------------------------------------------------------------- PPM / PGM

def _netpbm_bytes(magic, arr):
    h, w = arr.shape[:2]
    return f"{magic}\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def ppm_bytes(image) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError("PPM image must be (H, W, 3)")
    return _netpbm_bytes("P6", _to_u8(image, "image"))


def pgm_bytes(mask) -> bytes:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise FormatError("PGM mask must be (H, W)")
    return _netpbm_bytes("P5", np.where(mask.astype(bool), 255, 0).astype(np.uint8))


def ppm_write(path, image) -> None:
    atomic_write(path, ppm_bytes(image))


def pgm_write(path, mask) -> None:
    atomic_write(path, pgm_bytes(mask))


def _netpbm_read(path, magic, channels):
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        fields.append(data[start:pos])
    if fields[0] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} magic, got {fields[0]!r}")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header") from exc
    if maxval != 255 or w < 1 or h < 1:
        raise FormatError(f"{path}: only 8-bit images with positive size are supported")
    pos += 1  # single whitespace after maxval
    need = w * h * channels
    payload = data[pos:]
    if len(payload) < need:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    if len(payload) > need:
        raise FormatError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape((h, w, channels) if channels > 1 else (h, w))


def ppm_read(path) -> np.ndarray:
    """(H, W, 3) float image in [0, 1]."""
    return _netpbm_read(path, b"P6", 3) / 255.0


def pgm_read(path) -> np.ndarray:
    """(H, W) bool mask; any nonzero byte is set."""
    return _netpbm_read(path, b"P5", 1) > 0
