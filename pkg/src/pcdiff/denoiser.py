"""Point-voxel noise predictor with hand-written backpropagation.

Two branches read the same per-point input ``[xyz, conditioning]``:

* point branch: per-point MLP;
* voxel branch: average-voxelize, a U-Net of stride-2 (kernel 2) 3-D
  convolutions down and transposed convolutions up with skip connections,
  then trilinear devoxelization back to the points.

A fusion layer takes ``[point, voxel, time]`` to a hidden width and a
zero-initialized linear layer maps it to the output channels. The timestep
embedding is concatenated to the input of every layer.

Tensors are channel-last: points ``(B, N, C)``, grids ``(B, R, R, R, C)``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np
from scipy import sparse
from scipy.special import expit

from pcdiff.schedule import NoiseSchedule

GN_EPS = 1e-5
CKPT_MAGIC = b"PCDF"
CKPT_VERSION = 1


@dataclass(frozen=True)
class PointVoxelConfig:
    voxel_resolution: int = 16
    unet_depth: int = 4
    stage_channels: tuple = (16, 32, 64, 128)
    point_mlp_widths: tuple = (64, 128)
    feature_dim: int = 6
    time_dim: int = 64
    head_width: int = 64
    out_dim: int = 3
    groups: int = 8
    global_cond: bool = False
    image_channels: int = 3
    pooled_dim: int = 64

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "point_mlp_widths", tuple(int(c) for c in self.point_mlp_widths))
        r, d = self.voxel_resolution, self.unet_depth
        if r < 2:
            raise ValueError("voxel resolution must be >= 2")
        if d < 1 or len(self.stage_channels) != d:
            raise ValueError("need unet_depth >= 1 and one channel width per stage")
        if r % (2 ** d):
            raise ValueError(f"voxel resolution {r} not divisible by 2**{d}")
        if self.time_dim < 2 or self.time_dim % 2:
            raise ValueError("time_dim must be a positive even number")
        widths = self.stage_channels + self.point_mlp_widths + (
            self.feature_dim, self.head_width, self.out_dim, self.groups, self.pooled_dim)
        if min(widths) < 1 or not self.point_mlp_widths:
            raise ValueError("all widths must be >= 1")

    @property
    def cond_dim(self) -> int:
        return self.pooled_dim if self.global_cond else self.feature_dim

    @property
    def in_dim(self) -> int:
        return 3 + self.cond_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["point_mlp_widths"] = list(self.point_mlp_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PointVoxelConfig:
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})

    def digest(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()


def _groups(cfg: PointVoxelConfig, channels: int) -> int:
    g = min(cfg.groups, channels)
    while channels % g:
        g -= 1
    return g


def param_shapes(cfg: PointVoxelConfig) -> list[tuple[str, tuple]]:
    """Parameter names and shapes in checkpoint order."""
    D = cfg.time_dim
    shapes = []
    if cfg.global_cond:
        shapes += [("pool.w", (cfg.image_channels, cfg.pooled_dim)), ("pool.b", (cfg.pooled_dim,))]
    fan = cfg.in_dim
    for i, w in enumerate(cfg.point_mlp_widths):
        shapes += [(f"point.{i}.w", (fan + D, w)), (f"point.{i}.b", (w,))]
        fan = w
    c_in = cfg.in_dim
    for i, c in enumerate(cfg.stage_channels):
        shapes += [(f"down.{i}.w", (8 * (c_in + D), c)), (f"down.{i}.b", (c,)),
                   (f"down.{i}.gamma", (c,)), (f"down.{i}.beta", (c,))]
        c_in = c
    for j in reversed(range(cfg.unet_depth)):
        c_in, c_out, c_skip = _up_channels(cfg, j)
        shapes += [(f"up.{j}.w", (c_in + D, 8 * c_out)), (f"up.{j}.skip", (c_skip, c_out)),
                   (f"up.{j}.b", (c_out,)), (f"up.{j}.gamma", (c_out,)), (f"up.{j}.beta", (c_out,))]
    fuse_in = cfg.point_mlp_widths[-1] + _up_channels(cfg, 0)[1] + D
    shapes += [("head.w", (fuse_in, cfg.head_width)), ("head.b", (cfg.head_width,)),
               ("out.w", (cfg.head_width, cfg.out_dim)), ("out.b", (cfg.out_dim,))]
    return shapes


def _up_channels(cfg, j):
    ch = cfg.stage_channels
    c_in = ch[j]
    c_out = ch[j - 1] if j > 0 else ch[0]
    c_skip = ch[j - 1] if j > 0 else cfg.in_dim
    return c_in, c_out, c_skip


def init_params(cfg: PointVoxelConfig, seed: int = 0, dtype=np.float32) -> OrderedDict:
    """Fan-in uniform weights, zero biases, unit norm gains, zero output layer."""
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for name, shape in param_shapes(cfg):
        kind = name.rsplit(".", 1)[1]
        if kind in ("w", "skip") and not name.startswith("out."):
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif kind == "gamma":
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def index_map(cfg: PointVoxelConfig) -> list[tuple[str, tuple, int]]:
    """(name, shape, flat offset) for every tensor."""
    out, off = [], 0
    for name, shape in param_shapes(cfg):
        out.append((name, shape, off))
        off += int(np.prod(shape))
    return out


def param_count(cfg: PointVoxelConfig) -> int:
    return sum(int(np.prod(s)) for _, s in param_shapes(cfg))


def flatten(params) -> np.ndarray:
    return np.concatenate([p.ravel() for p in params.values()])


def unflatten(cfg: PointVoxelConfig, flat, dtype=np.float32) -> OrderedDict:
    flat = np.asarray(flat)
    if flat.size != param_count(cfg):
        raise ValueError(f"expected {param_count(cfg)} parameters, got {flat.size}")
    return OrderedDict((n, flat[o:o + int(np.prod(s))].reshape(s).astype(dtype))
                       for n, s, o in index_map(cfg))


def save_checkpoint(path, cfg: PointVoxelConfig, params) -> None:
    """Header (magic, version, config hash, config JSON), then float32 LE parameters."""
    from pcdiff.io import atomic_write
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    flat = flatten(params).astype("<f4")
    header = CKPT_MAGIC + struct.pack("<I", CKPT_VERSION) + cfg.digest()
    header += struct.pack("<I", len(blob)) + blob + struct.pack("<Q", flat.size)
    atomic_write(path, header + flat.tobytes())


def load_checkpoint(path, cfg: PointVoxelConfig | None = None):
    """Returns (config, params). A supplied config must hash-match the file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    digest = data[8:40]
    (blen,) = struct.unpack_from("<I", data, 40)
    stored = PointVoxelConfig.from_dict(json.loads(data[44:44 + blen]))
    if stored.digest() != digest:
        raise ValueError(f"{path}: corrupt header (config hash mismatch)")
    if cfg is not None and cfg.digest() != digest:
        raise ValueError(f"{path}: checkpoint was written for a different model config")
    (count,) = struct.unpack_from("<Q", data, 44 + blen)
    start = 52 + blen
    if start + 4 * count != len(data):
        raise ValueError(f"{path}: truncated or oversized payload")
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=start)
    return stored, unflatten(stored, flat)


# ---------------------------------------------------------------- primitives

def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding; even slots sin(t / 10000^(2k/dim)), odd slots cos."""
    if dim % 2:
        raise ValueError("embedding dimension must be even")
    t = np.asarray(t, dtype=np.float64)
    freq = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    ang = t[..., None] * freq
    out = np.empty(t.shape + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def _voxel_coords(pos, R):
    return np.clip(pos + 0.5, 0.0, 1.0) * (R - 1)


class Voxelizer:
    """Scatter/gather operators between a batch of clouds and their grids.

    Grid coordinate of a point is ``clip(p + 0.5, 0, 1) * (R - 1)``; cell
    centers sit at integers. Voxelization averages the points nearest each
    cell center; devoxelization interpolates trilinearly.
    """

    def __init__(self, pos, R: int, dtype=np.float64):
        if R < 2:
            raise ValueError("voxel resolution must be >= 2")
        pos = np.asarray(pos, dtype=np.float64)
        B, N, _ = pos.shape
        self.B, self.N, self.R = B, N, R
        v = _voxel_coords(pos, R).reshape(B * N, 3)
        batch = np.repeat(np.arange(B), N) * R ** 3
        cell = np.floor(v + 0.5).astype(np.int64)
        flat = batch + (cell[:, 0] * R + cell[:, 1]) * R + cell[:, 2]
        counts = np.bincount(flat, minlength=B * R ** 3)
        self.cell, self.counts = flat, counts
        cols = np.arange(B * N)
        self.scatter = sparse.csr_matrix(((1.0 / counts[flat]).astype(dtype), (flat, cols)),
                                         shape=(B * R ** 3, B * N))
        i0 = np.minimum(np.floor(v).astype(np.int64), R - 2)
        frac = v - i0
        rows, idx, wts = [], [], []
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = ((frac[:, 0] if dx else 1 - frac[:, 0])
                         * (frac[:, 1] if dy else 1 - frac[:, 1])
                         * (frac[:, 2] if dz else 1 - frac[:, 2]))
                    rows.append(cols)
                    idx.append(batch + ((i0[:, 0] + dx) * R + i0[:, 1] + dy) * R + i0[:, 2] + dz)
                    wts.append(w)
        self.gather = sparse.csr_matrix(
            (np.concatenate(wts).astype(dtype), (np.concatenate(rows), np.concatenate(idx))),
            shape=(B * N, B * R ** 3))
        self.scatter_t = self.scatter.T.tocsr()
        self.gather_t = self.gather.T.tocsr()

    def voxelize(self, feats):
        """Cell means, summed in an order fixed by the values so point order cannot matter."""
        K = feats.shape[-1]
        rows = feats.reshape(-1, K)
        order = np.lexsort(tuple(rows[:, k] for k in reversed(range(K))) + (self.cell,))
        cell = self.cell[order]
        starts = np.flatnonzero(np.r_[True, cell[1:] != cell[:-1]])
        grid = np.zeros((self.B * self.R ** 3, K), dtype=rows.dtype)
        occupied = cell[starts]
        grid[occupied] = np.add.reduceat(rows[order], starts, axis=0) / self.counts[occupied, None].astype(rows.dtype)
        return grid.reshape(self.B, self.R, self.R, self.R, K)

    def voxelize_backward(self, dgrid):
        K = dgrid.shape[-1]
        return (self.scatter_t @ dgrid.reshape(-1, K)).reshape(self.B, self.N, K)

    def devoxelize(self, grid):
        K = grid.shape[-1]
        return (self.gather @ grid.reshape(-1, K)).reshape(self.B, self.N, K)

    def devoxelize_backward(self, dfeat):
        K = dfeat.shape[-1]
        return (self.gather_t @ dfeat.reshape(-1, K)).reshape(self.B, self.R, self.R, self.R, K)


def voxelize(points, feats, R: int) -> np.ndarray:
    """Average per-point features into an ``(R, R, R, K)`` grid."""
    vox = Voxelizer(np.asarray(points)[None], R)
    return vox.voxelize(np.asarray(feats, dtype=np.float64)[None])[0]


def devoxelize(grid, points) -> np.ndarray:
    """Trilinearly sample an ``(R, R, R, K)`` grid at the points."""
    grid = np.asarray(grid, dtype=np.float64)
    vox = Voxelizer(np.asarray(points)[None], grid.shape[0])
    return vox.devoxelize(grid[None])[0]


def _silu(a):
    s = expit(a)
    return a * s, s


def _silu_grad(a, s):
    return s * (1.0 + a * (1.0 - s))


def _patchify(x):
    B, r = x.shape[0], x.shape[1] // 2
    C = x.shape[-1]
    x = x.reshape(B, r, 2, r, 2, r, 2, C).transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return x.reshape(B, r ** 3, 8 * C)


def _unpatchify(x, r):
    B, C = x.shape[0], x.shape[-1] // 8
    x = x.reshape(B, r, r, r, 2, 2, 2, C).transpose(0, 1, 4, 2, 5, 3, 6, 7)
    return x.reshape(B, 8 * r ** 3, C)


def _colsum(a):
    """Sum over every axis but the last; a ones-vector product is far faster than ufunc.reduce here."""
    flat = a.reshape(-1, a.shape[-1])
    return np.ones(len(flat), dtype=a.dtype) @ flat


def _pointsum(a):
    """(B, S, C) -> (B, C)."""
    return np.ones(a.shape[1], dtype=a.dtype) @ a


def _group_mean(a, G):
    """Per-(item, group) mean of (B, S, C), broadcast back to (B, 1, C)."""
    B, S, C = a.shape
    m = _pointsum(a).reshape(B, G, C // G).sum(-1) / (S * (C // G))
    return np.repeat(m, C // G, axis=1)[:, None, :]


def _gn_forward(x, gamma, beta, G):
    xc = x - _group_mean(x, G)
    inv = 1.0 / np.sqrt(_group_mean(xc * xc, G) + GN_EPS)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv)


def _gn_backward(dy, gamma, cache, G):
    xhat, inv = cache
    dgamma = _colsum(dy * xhat)
    dbeta = _colsum(dy)
    dxh = dy * gamma
    dx = (dxh - _group_mean(dxh, G) - xhat * _group_mean(dxh * xhat, G)) * inv
    return dx, dgamma, dbeta


# ---------------------------------------------------------------- network

class PointVoxelNet:
    """Forward pass with an optional cache, and its exact reverse pass."""

    def __init__(self, cfg: PointVoxelConfig, params=None, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed, dtype)
        names = [n for n, _ in param_shapes(cfg)]
        if list(self.params) != names:
            raise ValueError("parameters do not match the config")

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def _inputs(self, pos, cond):
        cfg, p = self.cfg, self.params
        dt = self.dtype
        pos = np.asarray(pos, dtype=dt)
        if pos.ndim == 2:
            pos = pos[None]
        B, N, _ = pos.shape
        cond = np.asarray(cond, dtype=dt)
        if cfg.global_cond:
            cond = cond.reshape(B, cfg.image_channels)
            pooled = cond @ p["pool.w"] + p["pool.b"]
            feats = np.broadcast_to(pooled[:, None, :], (B, N, cfg.pooled_dim))
        else:
            cond = cond.reshape(B, N, -1)
            if cond.shape[-1] != cfg.feature_dim:
                raise ValueError(f"expected {cfg.feature_dim} feature channels, got {cond.shape[-1]}")
            feats = cond
        return pos, cond, np.concatenate([pos, feats], axis=-1)

    def forward(self, pos, cond, t, keep: bool = False):
        """Predict ``(B, N, out_dim)`` from positions, conditioning and timesteps.

        ``cond`` is ``(B, N, feature_dim)`` projected features, or in global
        mode ``(B, image_channels)`` spatial means of the feature image.
        """
        cfg, p = self.cfg, self.params
        dt = self.dtype
        pos, cond, x = self._inputs(pos, cond)
        B, N, _ = pos.shape
        D = cfg.time_dim
        emb = time_embedding(np.broadcast_to(np.asarray(t), (B,)), D).astype(dt)
        cache = {"x": x, "emb": emb, "cond": cond}

        h = x
        for i in range(len(cfg.point_mlp_widths)):
            W = p[f"point.{i}.w"]
            fan = h.shape[-1]
            a = h @ W[:fan] + (emb @ W[fan:])[:, None, :] + p[f"point.{i}.b"]
            cache[f"point.{i}"] = (h, a)
            h, s = _silu(a)
            cache[f"point.{i}.s"] = s
        hp = h

        R = cfg.voxel_resolution
        vox = Voxelizer(pos, R, dt)
        cache["vox"] = vox
        g = [vox.voxelize(x)]
        r = R
        for i, c in enumerate(cfg.stage_channels):
            patches = _patchify(g[-1])
            C = g[-1].shape[-1]
            W = p[f"down.{i}.w"].reshape(8, C + D, c)
            a = patches @ W[:, :C].reshape(8 * C, c) + (emb @ W[:, C:].sum(0))[:, None] + p[f"down.{i}.b"]
            G = _groups(cfg, c)
            n, gcache = _gn_forward(a, p[f"down.{i}.gamma"], p[f"down.{i}.beta"], G)
            y, s = _silu(n)
            r //= 2
            cache[f"down.{i}"] = (patches, n, s, gcache)
            g.append(y.reshape(B, r, r, r, c))

        y = g[-1]
        for j in reversed(range(cfg.unet_depth)):
            c_in, c_out, c_skip = _up_channels(cfg, j)
            r = y.shape[1]
            W = p[f"up.{j}.w"]
            yin = y.reshape(B, r ** 3, c_in)
            u = _unpatchify(yin @ W[:c_in] + (emb @ W[c_in:])[:, None], r)
            skip = g[j].reshape(B, (2 * r) ** 3, c_skip)
            a = u + skip @ p[f"up.{j}.skip"] + p[f"up.{j}.b"]
            G = _groups(cfg, c_out)
            n, gcache = _gn_forward(a, p[f"up.{j}.gamma"], p[f"up.{j}.beta"], G)
            out, s = _silu(n)
            cache[f"up.{j}"] = (yin, skip, n, s, gcache)
            y = out.reshape(B, 2 * r, 2 * r, 2 * r, c_out)
        hv = vox.devoxelize(y)

        fused = np.concatenate([hp, hv, np.broadcast_to(emb[:, None], (B, N, D))], axis=-1)
        a = fused @ p["head.w"] + p["head.b"]
        z, s = _silu(a)
        cache["head"] = (fused, a, s)
        cache["z"] = z
        out = z @ p["out.w"] + p["out.b"]
        return (out, cache) if keep else out

    def backward(self, cache, dout) -> OrderedDict:
        """Gradients of sum(dout * forward(...)) with respect to every parameter."""
        cfg, p = self.cfg, self.params
        grads = OrderedDict((k, None) for k in p)
        emb = cache["emb"]
        B, N, _ = cache["x"].shape
        D = cfg.time_dim
        flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731

        z = cache["z"]
        grads["out.w"] = flat(z).T @ flat(dout)
        grads["out.b"] = _colsum(dout)
        fused, a, s = cache["head"]
        da = (dout @ p["out.w"].T) * _silu_grad(a, s)
        grads["head.w"] = flat(fused).T @ flat(da)
        grads["head.b"] = _colsum(da)
        dfused = da @ p["head.w"].T
        wp = cfg.point_mlp_widths[-1]
        c0 = _up_channels(cfg, 0)[1]
        dhp = dfused[..., :wp]
        dhv = dfused[..., wp:wp + c0]

        vox = cache["vox"]
        dy = vox.devoxelize_backward(np.ascontiguousarray(dhv))
        dg = [None] * (cfg.unet_depth + 1)
        for j in range(cfg.unet_depth):
            c_in, c_out, c_skip = _up_channels(cfg, j)
            yin, skip, n, s, gcache = cache[f"up.{j}"]
            dn = dy.reshape(B, -1, c_out) * _silu_grad(n, s)
            da, grads[f"up.{j}.gamma"], grads[f"up.{j}.beta"] = _gn_backward(
                dn, p[f"up.{j}.gamma"], gcache, _groups(cfg, c_out))
            grads[f"up.{j}.b"] = _colsum(da)
            grads[f"up.{j}.skip"] = flat(skip).T @ flat(da)
            dg[j] = (da @ p[f"up.{j}.skip"].T)
            du = _patchify(da.reshape(B, *(round(da.shape[1] ** (1 / 3)),) * 3, c_out))
            W = p[f"up.{j}.w"]
            grads[f"up.{j}.w"] = np.concatenate([flat(yin).T @ flat(du), emb.T @ _pointsum(du)])
            dy = du @ W[:c_in].T
        dg[cfg.unet_depth] = dy

        for i in reversed(range(cfg.unet_depth)):
            c = cfg.stage_channels[i]
            patches, n, s, gcache = cache[f"down.{i}"]
            dn = dg[i + 1].reshape(B, -1, c) * _silu_grad(n, s)
            da, grads[f"down.{i}.gamma"], grads[f"down.{i}.beta"] = _gn_backward(
                dn, p[f"down.{i}.gamma"], gcache, _groups(cfg, c))
            grads[f"down.{i}.b"] = _colsum(da)
            C = patches.shape[-1] // 8
            gx = (flat(patches).T @ flat(da)).reshape(8, C, c)
            gt = np.broadcast_to((emb.T @ _pointsum(da))[None], (8, D, c))
            grads[f"down.{i}.w"] = np.concatenate([gx, gt], axis=1).reshape(8 * (C + D), c)
            if i > 0 or cfg.global_cond:
                W = p[f"down.{i}.w"].reshape(8, C + D, c)
                dpatch = da @ W[:, :C].reshape(8 * C, c).T
                r = round(dpatch.shape[1] ** (1 / 3))
                dprev = _unpatchify(dpatch, r).reshape(B, 2 * r, 2 * r, 2 * r, C)
                dg[i] = dg[i].reshape(dprev.shape) + dprev

        dh = dhp
        for i in reversed(range(len(cfg.point_mlp_widths))):
            h, a = cache[f"point.{i}"]
            da = dh * _silu_grad(a, cache[f"point.{i}.s"])
            fan = h.shape[-1]
            grads[f"point.{i}.w"] = np.concatenate([flat(h).T @ flat(da), emb.T @ _pointsum(da)])
            grads[f"point.{i}.b"] = _colsum(da)
            if i > 0 or cfg.global_cond:
                dh = da @ p[f"point.{i}.w"][:fan].T

        if cfg.global_cond:
            dx = dh + vox.voxelize_backward(np.ascontiguousarray(dg[0]).reshape(-1, cfg.in_dim))
            dpooled = dx[..., 3:].sum(axis=1)
            grads["pool.w"] = cache["cond"].T @ dpooled
            grads["pool.b"] = dpooled.sum(axis=0)
        return OrderedDict((k, np.asarray(v, dtype=p[k].dtype)) for k, v in grads.items())

    def loss_and_grads(self, pos, cond, t, target):
        """Mean squared error against ``target`` and its parameter gradients."""
        out, cache = self.forward(pos, cond, t, keep=True)
        target = np.asarray(target, dtype=out.dtype).reshape(out.shape)
        diff = out - target
        loss = float(np.mean(diff.astype(np.float64) ** 2))
        grads = self.backward(cache, (2.0 / diff.size) * diff)
        return loss, grads


# ---------------------------------------------------------------- analytic oracle

@dataclass(frozen=True)
class AnalyticGaussianTarget:
    mu: tuple = (0.0, 0.0, 0.0)
    sigma: float = 1.0


def analytic_eps(x_t, t, target: AnalyticGaussianTarget, sched: NoiseSchedule) -> np.ndarray:
    """Optimal noise prediction when every point is drawn from N(mu, sigma^2 I).

    The marginal is x_t ~ N(sqrt(abar) mu, (abar sigma^2 + 1 - abar) I), and
    eps_hat = -sqrt(1 - abar) * grad log q(x_t).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    ab = sched.alpha_bars[np.asarray(t) - 1]
    ab = np.reshape(ab, np.shape(ab) + (1,) * (x_t.ndim - np.ndim(ab)))
    mu = np.asarray(target.mu, dtype=np.float64)
    var = ab * target.sigma ** 2 + 1.0 - ab
    return np.sqrt(1.0 - ab) * (x_t - np.sqrt(ab) * mu) / var
