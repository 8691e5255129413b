"""Noise-prediction training, conditional reverse sampling, and the coloring model."""
from __future__ import annotations

import csv
import os
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from pcdiff.denoiser import PointVoxelConfig, PointVoxelNet, load_checkpoint, save_checkpoint
from pcdiff.geometry import CameraView, PointCloud
from pcdiff.projection import DEFAULT_RADIUS, nearest_pixels, pixel_table, winning_pixels
from pcdiff.schedule import NoiseSchedule, forward_diffuse, reverse_step

MODES = ("projection", "naive", "global", "projection-no-mdf")


class NumericalError(RuntimeError):
    pass


# ---------------------------------------------------------------- conditioning

@dataclass
class View:
    """One input view prepared for repeated conditioning lookups."""
    camera: CameraView
    table: np.ndarray        # (H*W, C + 3), distance columns scaled to NDC-like units
    image_mean: np.ndarray   # (C,)


class Conditioner:
    """Turns (cloud, view) into network conditioning for one of the ablation modes.

    ``projection`` looks up the pixel each visible point wins in the z-buffer,
    ``naive`` the pixel under every point regardless of occlusion,
    ``projection-no-mdf`` zeroes the mask-distance columns, and ``global``
    hands the network the image's spatial mean instead of per-point rows.
    Distance columns are divided by half the shorter image side.
    """

    def __init__(self, mode: str = "projection", radius_ndc: float = DEFAULT_RADIUS):
        if mode not in MODES:
            raise ValueError(f"unknown conditioning mode {mode!r}; expected one of {MODES}")
        self.mode = mode
        self.radius_ndc = radius_ndc

    @property
    def global_cond(self) -> bool:
        return self.mode == "global"

    def prepare(self, image, mask, camera: CameraView) -> View:
        image = np.asarray(image, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if image.shape[:2] != (camera.height, camera.width) or mask.shape != image.shape[:2]:
            raise ValueError("image, mask and camera sizes disagree")
        table = pixel_table(image, mask, drop_distance=self.mode == "projection-no-mdf")
        table[:, -2:] /= min(camera.height, camera.width) / 2.0
        return View(camera, table, image.mean(axis=(0, 1)))

    def lookup(self, pos, view: View) -> np.ndarray:
        if self.mode == "naive":
            pix = nearest_pixels(pos, view.camera)
        else:
            pix = winning_pixels(pos, view.camera, self.radius_ndc)
        out = np.zeros((len(pos), view.table.shape[1]))
        seen = pix >= 0
        out[seen] = view.table[pix[seen]]
        return out

    def __call__(self, x, views) -> np.ndarray:
        """(B, N, C + 3) per-point rows, or (B, C) image means in global mode."""
        if self.global_cond:
            return np.stack([v.image_mean for v in views])
        return np.stack([self.lookup(x[b], v) for b, v in enumerate(views)])


# ---------------------------------------------------------------- loss

def batch_loss_and_grads(net: PointVoxelNet, x0, views, t, eps, sched: NoiseSchedule,
                         conditioner: Conditioner):
    x_t = forward_diffuse(x0, t, eps, sched)
    cond = conditioner(x_t, views)
    return net.loss_and_grads(x_t, cond, t, eps)


def training_loss(net: PointVoxelNet, x0, image, mask, camera: CameraView, t: int, eps,
                  sched: NoiseSchedule, conditioner: Conditioner | None = None,
                  with_grads: bool = False):
    """Mean squared error between eps and the network's prediction at x_t.

    ``x0`` and ``eps`` are (N, 3). Returns the loss, or (loss, grads).
    """
    conditioner = conditioner or Conditioner("global" if net.cfg.global_cond else "projection")
    x0 = (x0.positions if isinstance(x0, PointCloud) else np.asarray(x0, dtype=np.float64))[None]
    eps = np.asarray(eps, dtype=np.float64).reshape(x0.shape)
    view = conditioner.prepare(image, mask, camera)
    loss, grads = batch_loss_and_grads(net, x0, [view], np.array([t]), eps, sched, conditioner)
    return (loss, grads) if with_grads else loss


# ---------------------------------------------------------------- optimizer

class AdamW:
    """Adam with decoupled weight decay; state is float32 like the parameters."""

    def __init__(self, params, betas=(0.9, 0.999), weight_decay: float = 0.01, eps: float = 1e-8):
        self.b1, self.b2 = betas
        self.wd, self.eps = weight_decay, eps
        self.t = 0
        self.m = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())
        self.v = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())

    def update(self, params, grads, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p *= 1.0 - lr * self.wd
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state_dict(self) -> dict:
        out = {"t": np.array(self.t)}
        out.update({f"m/{k}": v for k, v in self.m.items()})
        out.update({f"v/{k}": v for k, v in self.v.items()})
        return out

    def load_state_dict(self, state) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.array(state[f"m/{k}"])
            self.v[k] = np.array(state[f"v/{k}"])


# ---------------------------------------------------------------- training loop

@dataclass
class TrainConfig:
    batch_size: int = 16
    total_steps: int = 5000
    lr_start: float = 2e-4
    lr_end: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    seed: int = 0
    desk_scale: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if not (self.lr_start >= self.lr_end >= 0):
            raise ValueError("need lr_start >= lr_end >= 0")
        if self.batch_size < 1 or self.total_steps < 1:
            raise ValueError("batch_size and total_steps must be >= 1")

    def lr(self, step: int) -> float:
        """Linear decay; step runs 0..total_steps-1."""
        return self.lr_start + (self.lr_end - self.lr_start) * step / self.total_steps


@dataclass
class TrainState:
    net: PointVoxelNet
    opt: AdamW
    step: int = 0


def new_state(model_cfg: PointVoxelConfig, cfg: TrainConfig) -> TrainState:
    net = PointVoxelNet(model_cfg, seed=cfg.seed)
    return TrainState(net, AdamW(net.params, (cfg.beta1, cfg.beta2), cfg.weight_decay))


def save_state(path, state: TrainState) -> None:
    """Parameters in the checkpoint format plus an ``.opt.npz`` sidecar for exact resume."""
    save_checkpoint(path, state.net.cfg, state.net.params)
    tmp = path + ".opt.tmp.npz"
    np.savez(tmp, step=np.array(state.step), **state.opt.state_dict())
    os.replace(tmp, path + ".opt.npz")


def load_state(path, cfg: TrainConfig, model_cfg: PointVoxelConfig | None = None) -> TrainState:
    mcfg, params = load_checkpoint(path, model_cfg)
    net = PointVoxelNet(mcfg, params)
    opt = AdamW(net.params, (cfg.beta1, cfg.beta2), cfg.weight_decay)
    with np.load(path + ".opt.npz") as z:
        opt.load_state_dict(z)
        step = int(z["step"])
    return TrainState(net, opt, step)


def train(records, cfg: TrainConfig, sched: NoiseSchedule, conditioner: Conditioner,
          state: TrainState, *, steps: int | None = None, loss_csv=None, checkpoint=None,
          log=None) -> list[tuple[int, float, float]]:
    """Run optimizer steps from ``state.step`` up to ``steps`` (default total_steps).

    Each step draws its batch ids, timesteps and noise from a generator seeded
    with (seed, step), so a resumed run repeats the uninterrupted one exactly.
    """
    if not records:
        raise ValueError("training set is empty")
    views = [conditioner.prepare(r.image, r.mask, r.camera) for r in records]
    x0_all = np.stack([r.cloud.positions for r in records])
    end = cfg.total_steps if steps is None else min(steps, cfg.total_steps)
    trace = []
    fh = None
    if loss_csv is not None:
        new = state.step == 0 or not os.path.exists(loss_csv)
        fh = open(loss_csv, "w" if new else "a", newline="")
        writer = csv.writer(fh)
        if new:
            writer.writerow(["step", "loss", "lr"])
    try:
        while state.step < end:
            step = state.step
            rng = np.random.default_rng([cfg.seed, step])
            ids = rng.integers(0, len(records), cfg.batch_size)
            t = rng.integers(1, sched.T + 1, cfg.batch_size)
            eps = rng.standard_normal(x0_all[ids].shape)
            loss, grads = batch_loss_and_grads(state.net, x0_all[ids], [views[i] for i in ids],
                                               t, eps, sched, conditioner)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericalError(f"non-finite loss at step {step} (t={t.tolist()}, "
                                     f"batch ids={ids.tolist()})")
            lr = cfg.lr(step)
            state.opt.update(state.net.params, grads, lr)
            state.step += 1
            trace.append((step, loss, lr))
            if fh is not None:
                writer.writerow([step, repr(loss), repr(lr)])
            if log is not None:
                log(step, loss, lr)
            if checkpoint and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_state(checkpoint, state)
    finally:
        if fh is not None:
            fh.close()
    if checkpoint:
        save_state(checkpoint, state)
    return trace


# ---------------------------------------------------------------- sampling

@dataclass
class SampleResult:
    clouds: list            # K arrays (N, 3)
    condition_calls: int    # timesteps at which conditioning was queried


def reverse_chain(eps_fn, n_points: int, seeds, sched: NoiseSchedule, condition=None) -> SampleResult:
    """Ancestral sampling of one chain per seed, batched.

    Chain k draws x_T and every z from ``default_rng(seeds[k])``.
    ``eps_fn(x, t, cond)`` gets x (K, N, 3), t (K,) and ``condition(x)``.
    """
    if n_points < 1:
        raise ValueError("need at least one point")
    rngs = [np.random.default_rng(s) for s in seeds]
    x = np.stack([r.standard_normal((n_points, 3)) for r in rngs])
    calls = 0
    for step in range(sched.T, 0, -1):
        cond = None
        if condition is not None:
            cond = condition(x)
            calls += 1
        t = np.full(len(rngs), step)
        eps = np.asarray(eps_fn(x, t, cond), dtype=np.float64)
        if step > 1:
            z = np.stack([r.standard_normal((n_points, 3)) for r in rngs])
        else:
            z = np.zeros_like(x)
        x = reverse_step(x, eps, t, z, sched)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"sampling diverged at t={step}")
    return SampleResult(list(x), calls)


def sample(net: PointVoxelNet, image, mask, camera: CameraView, n_points: int, seeds,
           sched: NoiseSchedule, conditioner: Conditioner | None = None) -> SampleResult:
    """K candidate reconstructions (one per seed), conditioned at every step."""
    conditioner = conditioner or Conditioner("global" if net.cfg.global_cond else "projection")
    view = conditioner.prepare(image, mask, camera)
    views = [view] * len(seeds)
    return reverse_chain(lambda x, t, c: net.forward(x, c, t), n_points, seeds, sched,
                         lambda x: conditioner(x, views))


# ---------------------------------------------------------------- coloring

def color_config(model_cfg: PointVoxelConfig) -> PointVoxelConfig:
    d = model_cfg.to_dict()
    d.update(out_dim=3, global_cond=False)
    return PointVoxelConfig.from_dict(d)


def train_colorizer(records, cfg: TrainConfig, conditioner: Conditioner, net: PointVoxelNet,
                    *, log=None) -> list[tuple[int, float, float]]:
    """Fit the single-step coloring network on ground-truth shapes (t fixed at 0)."""
    views = [conditioner.prepare(r.image, r.mask, r.camera) for r in records]
    pos_all = np.stack([r.cloud.positions for r in records])
    col_all = np.stack([r.cloud.colors for r in records])
    opt = AdamW(net.params, (cfg.beta1, cfg.beta2), cfg.weight_decay)
    trace = []
    for step in range(cfg.total_steps):
        rng = np.random.default_rng([cfg.seed, step])
        ids = rng.integers(0, len(records), cfg.batch_size)
        pos = pos_all[ids]
        cond = conditioner(pos, [views[i] for i in ids])
        loss, grads = net.loss_and_grads(pos, cond, np.zeros(len(ids)), col_all[ids])
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite coloring loss at step {step}")
        opt.update(net.params, grads, cfg.lr(step))
        trace.append((step, loss, cfg.lr(step)))
        if log is not None:
            log(step, loss, cfg.lr(step))
    return trace


def colorize(net: PointVoxelNet, shape: PointCloud, image, mask, camera: CameraView,
             conditioner: Conditioner | None = None) -> PointCloud:
    """One forward pass of the coloring network; colors clamped to [0, 1]."""
    conditioner = conditioner or Conditioner("projection")
    pos = shape.positions[None]
    cond = conditioner(pos, [conditioner.prepare(image, mask, camera)])
    rgb = np.clip(net.forward(pos, cond, np.zeros(1))[0].astype(np.float64), 0.0, 1.0)
    return PointCloud(shape.positions.copy(), rgb)
