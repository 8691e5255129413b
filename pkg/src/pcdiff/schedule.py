"""Noise schedule and the forward/reverse DDPM arithmetic over point sets.

Timesteps are 1-based: ``t = 1..T``. Arrays in :class:`NoiseSchedule` are
indexed with ``t - 1``. Clouds are plain ``(..., N, 3)`` arrays; batched
calls pass ``t`` as an int array with one entry per leading item.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigma_sq: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def check_t(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [1, {self.T}]: {t}")
        return t


def build_schedule(T: int = 1000, beta_start: float = 1e-5, beta_end: float = 8e-3,
                   warmup_fraction: float = 0.1, posterior_variance: bool = False) -> NoiseSchedule:
    """Linear beta schedule with a quadratic warmup over the first steps.

    For ``t <= W = ceil(warmup_fraction * T)`` beta rises quadratically from
    ``beta_start`` to the linear schedule's value at ``W``; afterwards it
    follows the straight line from ``beta_start`` (t=1) to ``beta_end`` (t=T).
    ``posterior_variance`` selects sigma_t^2 = beta-tilde instead of beta.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if not (0.0 <= warmup_fraction < 1.0):
        raise ValueError("warmup_fraction must lie in [0, 1)")
    if T == 1:
        betas = np.array([beta_end])
    else:
        t = np.arange(1, T + 1, dtype=np.float64)
        betas = beta_start + (beta_end - beta_start) * (t - 1) / (T - 1)
        w = math.ceil(warmup_fraction * T)
        if w >= 2:
            ramp = ((t[:w] - 1) / (w - 1)) ** 2
            betas[:w] = beta_start + (betas[w - 1] - beta_start) * ramp
        betas[-1] = beta_end
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    if posterior_variance:
        prev = np.concatenate([[1.0], alpha_bars[:-1]])
        sigma_sq = (1.0 - prev) / (1.0 - alpha_bars) * betas
    else:
        sigma_sq = betas.copy()
    return NoiseSchedule(betas, alphas, alpha_bars, sigma_sq)


def _bcast(values, t, ndim):
    v = values[np.asarray(t) - 1]
    return np.reshape(v, np.shape(v) + (1,) * (ndim - np.ndim(v)))


def forward_diffuse(x0, t, eps, sched: NoiseSchedule):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if eps.shape != x0.shape:
        raise ValueError(f"noise shape {eps.shape} does not match cloud {x0.shape}")
    sched.check_t(t)
    ab = _bcast(sched.alpha_bars, t, x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def reverse_step(x_t, eps_hat, t, z, sched: NoiseSchedule):
    """One ancestral step: mean from the noise prediction, plus sigma_t z (z ignored at t=1)."""
    x_t = np.asarray(x_t)
    t = sched.check_t(t)
    nd = x_t.ndim
    beta = _bcast(sched.betas, t, nd)
    ab = _bcast(sched.alpha_bars, t, nd)
    a = _bcast(sched.alphas, t, nd)
    sigma = np.sqrt(_bcast(sched.sigma_sq, t, nd))
    mean = (x_t - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    sigma = np.where(_bcast(np.arange(1, sched.T + 1), t, nd) == 1, 0.0, sigma)
    return mean + sigma * z
