import math
import os

import numpy as np
import pytest

from gradcheck import TINY, gradient_errors
from oracles import conditional_eps, trilinear
from pcdiff.denoiser import (AnalyticGaussianTarget, PointVoxelConfig, PointVoxelNet, analytic_eps,
                             devoxelize, flatten, index_map, init_params, load_checkpoint, param_count,
                             param_shapes, save_checkpoint, time_embedding, voxelize)
from pcdiff.schedule import build_schedule, forward_diffuse


def test_time_embedding_values():
    assert np.array_equal(time_embedding(0, 6), [0, 1, 0, 1, 0, 1])
    assert time_embedding(1, 2) == pytest.approx([math.sin(1), math.cos(1)])
    assert time_embedding(1, 2)[0] == pytest.approx(0.841470, abs=1e-6)
    e = time_embedding(np.arange(0, 2000, 7), 64)
    assert e.shape == (286, 64) and np.all(np.abs(e) <= 1)
    k = 5
    assert e[3, 2 * k] == pytest.approx(math.sin(21 / 10000 ** (2 * k / 64)))
    with pytest.raises(ValueError):
        time_embedding(3, 5)


def cell_center(idx, R):
    return np.asarray(idx) / (R - 1) - 0.5


def test_voxelize_single_point_at_center():
    R = 5
    p = cell_center([[1, 3, 2]], R)
    grid = voxelize(p, [[1.0]], R)
    assert grid[1, 3, 2, 0] == 1.0 and grid.sum() == 1.0
    assert devoxelize(grid, p)[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_voxelize_averages_cell():
    R = 4
    p = cell_center([[2, 2, 2], [2, 2, 2]], R) + [[0.01, 0, 0], [-0.02, 0.01, 0]]
    grid = voxelize(p, [[2.0], [4.0]], R)
    assert grid[2, 2, 2, 0] == 3.0 and grid.sum() == 3.0


def test_devoxelize_matches_trilinear_oracle():
    rng = np.random.default_rng(0)
    R = 4
    grid = rng.normal(size=(R, R, R, 3))
    pts = rng.uniform(-0.55, 0.55, (16, 3))  # includes clamped points
    got = devoxelize(grid, pts)
    want = np.array([trilinear(grid, p) for p in pts])
    assert np.abs(got - want).max() < 1e-12


def test_voxel_resolution_checked():
    with pytest.raises(ValueError):
        voxelize(np.zeros((1, 3)), np.ones((1, 1)), 1)
    with pytest.raises(ValueError):
        PointVoxelConfig(voxel_resolution=1)
    with pytest.raises(ValueError):
        PointVoxelConfig(voxel_resolution=12, unet_depth=3, stage_channels=(4, 4, 4))
    with pytest.raises(ValueError):
        PointVoxelConfig(time_dim=7)


def test_param_count_is_a_function_of_config():
    a, b = PointVoxelConfig(), PointVoxelConfig()
    assert param_count(a) == param_count(b) == flatten(init_params(a)).size
    assert index_map(a) == index_map(b)
    names = [n for n, _ in param_shapes(PointVoxelConfig(global_cond=True))]
    assert names[:2] == ["pool.w", "pool.b"]
    assert param_count(PointVoxelConfig(**TINY)) < param_count(a)


def test_init_zero_output_and_finite():
    p = init_params(PointVoxelConfig(**TINY), seed=3)
    assert np.all(p["out.w"] == 0) and np.all(p["out.b"] == 0)
    assert all(np.all(np.isfinite(v)) for v in p.values())
    assert np.array_equal(flatten(p), flatten(init_params(PointVoxelConfig(**TINY), seed=3)))


@pytest.mark.parametrize("n", [1, 7, 64])
@pytest.mark.parametrize("glob", [False, True])
def test_output_shape_and_zero_at_init(n, glob):
    net = PointVoxelNet(PointVoxelConfig(**TINY, global_cond=glob))
    rng = np.random.default_rng(n)
    cond = rng.random(3) if glob else rng.random((n, 6))
    out = net.forward(rng.uniform(-0.5, 0.5, (n, 3)), cond, 4)
    assert out.shape == (1, n, 3) and np.all(out == 0)


def perturbed(cfg, seed=0):
    net = PointVoxelNet(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    net.params["out.w"][:] = rng.normal(0, 0.1, net.params["out.w"].shape)
    return net


@pytest.mark.parametrize("glob", [False, True])
def test_permutation_equivariance_exact(glob):
    net = perturbed(PointVoxelConfig(global_cond=glob))
    rng = np.random.default_rng(1)
    pos = rng.uniform(-0.5, 0.5, (2, 300, 3))
    pos[:, :100] = np.round(pos[:, :100] * 3) / 3  # several points per voxel
    cond = rng.random((2, 3)) if glob else rng.random((2, 300, 6))
    perm = rng.permutation(300)
    a = net.forward(pos, cond, np.array([3, 40]))
    b = net.forward(pos[:, perm], cond if glob else cond[:, perm], np.array([3, 40]))
    assert np.array_equal(a[:, perm], b)


def test_global_mode_sees_only_image_mean():
    net = perturbed(PointVoxelConfig(**TINY, global_cond=True))
    rng = np.random.default_rng(2)
    img_a = rng.random((16, 16, 3))
    img_b = img_a[::-1, ::-1]  # same spatial mean, different image
    pos = rng.uniform(-0.5, 0.5, (20, 3))
    a = net.forward(pos, img_a.mean(axis=(0, 1)), 5)
    b = net.forward(pos, img_b.mean(axis=(0, 1)), 5)
    assert np.array_equal(a, b)


def test_shape_mismatch_rejected():
    net = PointVoxelNet(PointVoxelConfig(**TINY))
    with pytest.raises(ValueError):
        net.forward(np.zeros((4, 3)), np.zeros((4, 5)), 1)


@pytest.mark.parametrize("mode", ["projection", "global"])
def test_gradients_match_finite_differences(mode):
    errors = gradient_errors(mode)
    assert max(errors.values()) < 1e-3, errors


def test_checkpoint_round_trip(tmp_path):
    cfg = PointVoxelConfig(**TINY)
    net = perturbed(cfg)
    path = os.fspath(tmp_path / "m.ckpt")
    save_checkpoint(path, cfg, net.params)
    data = open(path, "rb").read()
    assert data[:4] == b"PCDF"
    assert data.endswith(flatten(net.params).astype("<f4").tobytes())
    cfg2, params = load_checkpoint(path, cfg)
    assert cfg2 == cfg and np.array_equal(flatten(params), flatten(net.params))


def test_checkpoint_config_mismatch(tmp_path):
    cfg = PointVoxelConfig(**TINY)
    path = os.fspath(tmp_path / "m.ckpt")
    save_checkpoint(path, cfg, init_params(cfg))
    with pytest.raises(ValueError, match="different model config"):
        load_checkpoint(path, PointVoxelConfig(**{**TINY, "head_width": 9}))
    with open(path, "r+b") as fh:
        fh.truncate(os.path.getsize(path) - 4)
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)
    with open(path, "r+b") as fh:
        fh.write(b"XXXX")
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_analytic_eps_delta_target_recovers_noise():
    s = build_schedule(50, 1e-3, 0.05)
    rng = np.random.default_rng(3)
    mu = (0.5, -0.2, 0.1)
    eps = rng.standard_normal((10, 3))
    x0 = np.broadcast_to(mu, (10, 3))
    for t in (1, 17, 50):
        xt = forward_diffuse(x0, t, eps, s)
        got = analytic_eps(xt, t, AnalyticGaussianTarget(mu, 0.0), s)
        assert np.allclose(got, eps, atol=1e-12)


def test_analytic_eps_standard_target():
    s = build_schedule(50, 1e-3, 0.05)
    x = np.random.default_rng(4).standard_normal((5, 3))
    got = analytic_eps(x, 30, AnalyticGaussianTarget((0, 0, 0), 1.0), s)
    assert np.allclose(got, np.sqrt(1 - s.alpha_bars[29]) * x)


def test_analytic_eps_hand_value_and_numerical_score():
    """abar = 0.72, sigma = 0.1, mu = 0.5, x = 1: closed form vs Monte Carlo E[eps | x_t]."""
    s = build_schedule(2, 0.1, 0.2, 0.0)  # alpha_bar_2 = 0.72
    got = analytic_eps(np.array([[1.0, 1.0, 1.0]]), 2, AnalyticGaussianTarget((0.5,) * 3, 0.1), s)[0, 0]
    expect = math.sqrt(0.28) * (1 - math.sqrt(0.72) * 0.5) / (0.72 * 0.01 + 0.28)
    assert got == pytest.approx(expect, abs=1e-12)
    assert got == pytest.approx(1.060762, abs=1e-6)
    rng = np.random.default_rng(5)
    numeric, n = conditional_eps(rng.normal(0.5, 0.1, 10 ** 6), rng.standard_normal(10 ** 6), 0.72, 1.0, 0.005)
    # posterior sd of eps is about 0.16, so the standard error is well under 0.01
    assert n > 3000
    assert numeric == pytest.approx(got, abs=0.01)
