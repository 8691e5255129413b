import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from pcdiff import io
from pcdiff.cli import main, turntable_cameras
from pcdiff.config import ConfigError, ExperimentConfig
from pcdiff.data import shade
from pcdiff.filtering import filter_fa, filter_fm, CandidateSet
from pcdiff.geometry import CameraView, PointCloud
from pcdiff.metrics import fscore

TINY_CONFIG = {
    "schedule": {"T": 8, "beta_start": 1e-3, "beta_end": 0.2},
    "model": {"voxel_resolution": 4, "unet_depth": 1, "stage_channels": [4], "point_mlp_widths": [8],
              "time_dim": 8, "head_width": 8, "groups": 2, "pooled_dim": 8},
    "train": {"batch_size": 2, "total_steps": 6},
    "conditioning": {"mode": "projection", "radius_ndc": 0.06},
    "filter": {"k": 3, "radius_ndc": 0.06},
    "data": {"families": ["sphere", "box"], "instances": 3, "image_size": 24, "points": 32,
             "dense_factor": 16, "focal": 17.0, "eval_fraction": 0.34},
    "seed": 1,
}


def write_config(path, doc=TINY_CONFIG):
    path.write_text(json.dumps(doc))
    return os.fspath(path)


def run(*argv):
    return main([str(a) for a in argv])


def tree_digest(root):
    h = hashlib.sha256()
    for d, _, files in sorted(os.walk(root)):
        for f in sorted(files):
            h.update(os.path.relpath(os.path.join(d, f), root).encode())
            with open(os.path.join(d, f), "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


# ---------------------------------------------------------------- config

def test_default_config_round_trip():
    cfg = ExperimentConfig()
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again.to_dict() == cfg.to_dict() and again.digest() == cfg.digest()
    assert cfg.filter.k == 5 and cfg.schedule.T == 1000 and cfg.train.batch_size == 16
    assert cfg.data.instances * len(cfg.data.families) == 600


def test_partial_config_takes_defaults():
    cfg = ExperimentConfig.from_dict({"schedule": {"T": 50}})
    assert cfg.schedule.T == 50 and cfg.schedule.beta_end == 8e-3 and cfg.model.voxel_resolution == 16
    tiny = ExperimentConfig.from_dict(TINY_CONFIG)
    assert ExperimentConfig.from_json(tiny.to_json()).to_dict() == tiny.to_dict()


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"train": {"batch": 3}},
    {"conditioning": {"mode": "depth"}},
    {"filter": {"strategy": "best"}},
    {"filter": {"k": 0}},
    {"schedule": {"T": 0}},
    {"model": {"voxel_resolution": 12}},
    {"train": 5},
    [],
])
def test_bad_configs_rejected(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_bad_config_exit_code(tmp_path, capsys):
    bad = write_config(tmp_path / "bad.json", {"train": {"nope": 1}})
    assert run("gen-data", "--config", bad, "--out", tmp_path / "d") == 2
    assert "nope" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{")
    assert run("gen-data", "--config", tmp_path / "broken.json", "--out", tmp_path / "d") == 2
    assert run("gen-data", "--config", tmp_path / "missing.json", "--out", tmp_path / "d") == 4


def test_version_prints_default_digest():
    out = subprocess.run([sys.executable, "-m", "pcdiff.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.split() == ["pcdiff", "0.1.0", "config", ExperimentConfig().digest()]


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


# ---------------------------------------------------------------- pipeline

@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "cfg.json")
    assert run("gen-data", "--config", cfg, "--out", root / "data") == 0
    manifest = root / "data" / "manifest.json"
    assert run("train", "--config", cfg, "--manifest", manifest, "--out", root / "m.ckpt") == 0
    entry = json.loads(manifest.read_text())[0]
    data = root / "data"
    view = [data / entry[k] for k in ("image", "mask", "camera")]
    assert run("sample", "--checkpoint", root / "m.ckpt", "--image", view[0], "--mask", view[1],
               "--camera", view[2], "--out", root / "cands") == 0
    return root, cfg, manifest, entry, view


def test_gen_data_is_deterministic(pipeline, tmp_path, capsys):
    root, cfg, manifest, _, _ = pipeline
    assert run("gen-data", "--config", cfg, "--out", tmp_path / "again") == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1] == f"wrote {tmp_path / 'again' / 'manifest.json'}"
    assert len(out) == 6 * 4 + 1
    assert tree_digest(root / "data") == tree_digest(tmp_path / "again")
    assert run("gen-data", "--config", cfg, "--seed", 2, "--out", tmp_path / "other") == 0
    assert tree_digest(root / "data") != tree_digest(tmp_path / "other")


def test_train_outputs_and_lr_trace(pipeline):
    root = pipeline[0]
    for suffix in ("", ".opt.npz", ".loss.csv", ".config.json"):
        assert os.path.exists(f"{root / 'm.ckpt'}{suffix}")
    rows = (root / "m.ckpt.loss.csv").read_text().split()
    assert rows[0] == "step,loss,lr" and len(rows) == 7
    lrs = [float(r.split(",")[2]) for r in rows[1:]]
    assert lrs[0] == 2e-4 and lrs[-1] == pytest.approx(2e-4 / 6)


def test_train_resume_via_cli_is_bit_identical(pipeline, tmp_path):
    root, cfg, manifest, _, _ = pipeline
    ck = tmp_path / "r.ckpt"
    assert run("train", "--config", cfg, "--manifest", manifest, "--out", ck, "--stop-at", 2) == 0
    assert run("train", "--config", cfg, "--manifest", manifest, "--out", ck, "--resume") == 0
    assert ck.read_bytes() == (root / "m.ckpt").read_bytes()
    assert (tmp_path / "r.ckpt.loss.csv").read_text() == (root / "m.ckpt.loss.csv").read_text()


def test_regenerated_data_trains_to_same_loss(pipeline, tmp_path):
    root, cfg, _, _, _ = pipeline
    assert run("gen-data", "--config", cfg, "--out", tmp_path / "d") == 0
    assert run("train", "--config", cfg, "--manifest", tmp_path / "d" / "manifest.json",
               "--out", tmp_path / "m.ckpt") == 0
    assert (tmp_path / "m.ckpt.loss.csv").read_text() == (root / "m.ckpt.loss.csv").read_text()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_training_exits_3(pipeline, tmp_path):
    _, _, manifest, _, _ = pipeline
    doc = json.loads(json.dumps(TINY_CONFIG))
    doc["train"]["lr_start"] = 1e30
    doc["train"]["total_steps"] = 50
    cfg = write_config(tmp_path / "hot.json", doc)
    assert run("train", "--config", cfg, "--manifest", manifest, "--out", tmp_path / "h.ckpt") == 3


def test_sample_outputs_and_determinism(pipeline, tmp_path):
    root, _, _, _, view = pipeline
    meta = json.loads((root / "cands" / "candidates.json").read_text())
    assert len(meta["clouds"]) == 3 and meta["condition_calls"] == 8
    for f in meta["clouds"] + meta["silhouettes"]:
        assert (root / "cands" / f).exists()
    args = ["sample", "--checkpoint", root / "m.ckpt", "--image", view[0], "--mask", view[1],
            "--camera", view[2]]
    assert run(*args, "--out", tmp_path / "again") == 0
    assert tree_digest(root / "cands") == tree_digest(tmp_path / "again")
    assert run(*args, "--k", 1, "--out", tmp_path / "one") == 0
    assert sorted(os.listdir(tmp_path / "one")) == ["cand_000.ply", "candidates.json", "sil_000.pgm"]
    assert run(*args, "--k", 0, "--out", tmp_path / "zero") == 2


def test_filter_reports_match_library(pipeline, tmp_path, capsys):
    root, _, _, entry, view = pipeline
    cands = root / "cands"
    meta = json.loads((cands / "candidates.json").read_text())
    sils = [io.pgm_read(cands / f) for f in meta["silhouettes"]]
    clouds = [io.ply_read(cands / f).positions for f in meta["clouds"]]
    lib = CandidateSet(clouds, sils)
    assert run("filter", cands, "--strategy", "fm", "--mask", view[1], "--out", tmp_path / "fm.json") == 0
    rep = json.loads((tmp_path / "fm.json").read_text())
    assert rep["selected"] == filter_fm(lib, io.pgm_read(view[1]))
    assert run("filter", cands, "--strategy", "fa", "--out", tmp_path / "fa.json") == 0
    assert json.loads((tmp_path / "fa.json").read_text())["selected"] == filter_fa(lib)
    gt = root / "data" / entry["cloud"]
    assert run("filter", cands, "--strategy", "oracle", "--gt", gt, "--out", tmp_path / "o.json") == 0
    f = [fscore(c, io.ply_read(gt).positions).f for c in clouds]
    assert json.loads((tmp_path / "o.json").read_text())["selected"] == int(np.argmax(f))
    assert run("filter", cands, "--strategy", "fm") == 2
    assert run("filter", cands, "--strategy", "oracle") == 2
    assert run("filter", tmp_path / "nowhere", "--strategy", "fa") == 4


def test_eval_ground_truth_scores_one(pipeline, tmp_path, capsys):
    root, _, manifest, _, _ = pipeline
    from pcdiff.data import load_manifest
    recs = load_manifest(manifest, "eval")
    preds = tmp_path / "gt"
    preds.mkdir()
    rng = np.random.default_rng(0)
    noisy = tmp_path / "noisy"
    noisy.mkdir()
    for r in recs:
        io.ply_write(preds / f"{r.id}.ply", r.cloud)
        io.ply_write(noisy / f"{r.id}.ply", PointCloud(r.cloud.positions + rng.normal(0, 0.01, (32, 3))))
    out = tmp_path / "rep.json"
    assert run("eval", "--manifest", manifest, "--checkpoint", preds, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert len(rep["records"]) == 2 and all(r["f"] == 1.0 for r in rep["records"])
    means = []
    for tau in (0.005, 0.01, 0.02):
        assert run("eval", "--manifest", manifest, "--checkpoint", noisy, "--tau", tau, "--out", out) == 0
        rep = json.loads(out.read_text())
        for rec, row in zip(recs, rep["records"]):
            pred = io.ply_read(noisy / f"{rec.id}.ply").positions
            assert row["f"] == fscore(pred, rec.cloud.positions, tau).f
        means.append(rep["mean"]["f"])
    assert means == sorted(means)


def test_eval_checkpoint(pipeline, tmp_path):
    root, _, manifest, _, _ = pipeline
    out = tmp_path / "ck.json"
    assert run("eval", "--manifest", manifest, "--checkpoint", root / "m.ckpt", "--out", out,
               "--strategy", "none") == 0
    rep = json.loads(out.read_text())
    assert rep["strategy"] == "none" and len(rep["records"]) == 2
    assert all(len(r["candidates"]) == 3 for r in rep["records"])
    assert run("eval", "--manifest", manifest, "--checkpoint", root / "m.ckpt", "--split", "test") == 2


def test_turntable(pipeline, tmp_path):
    root, _, _, entry, view = pipeline
    ply = root / "data" / entry["cloud"]
    assert run("render-turntable", "--ply", ply, "--camera", view[2], "--frames", 6, "--out", tmp_path / "tt") == 0
    frames = sorted(os.listdir(tmp_path / "tt"))
    assert frames == [f"frame_{i:04d}.ppm" for i in range(6)]
    cam = CameraView.from_json(view[2].read_text())
    direct, _ = shade(io.ply_read(ply), cam, 0.015)
    assert np.array_equal(io.ppm_read(tmp_path / "tt" / frames[0]), np.rint(direct * 255) / 255)
    assert run("render-turntable", "--ply", ply, "--camera", view[2], "--frames", 0, "--out", tmp_path / "x") == 2


def test_turntable_orbit_closes():
    from pcdiff.geometry import orbit_camera
    cam = orbit_camera(0.3, 0.4, 1.8, fx=20, fy=20, cx=15.5, cy=15.5, width=32, height=32)
    n = 7
    poses = turntable_cameras(cam, n)
    # one more step past the last frame lands back on frame 0
    step = turntable_cameras(poses[-1], n)[1]
    assert np.allclose(step.rotation, poses[0].rotation, atol=1e-12)
    assert np.allclose(step.center, poses[0].center, atol=1e-12)
    # every frame keeps its distance and height, and frames are evenly spaced in azimuth
    centers = np.array([p.center for p in poses])
    assert np.allclose(np.linalg.norm(centers, axis=1), 1.8)
    assert np.allclose(centers[:, 2], centers[0, 2])
    az = np.unwrap(np.arctan2(centers[:, 1], centers[:, 0]))
    assert np.allclose(np.diff(az), 2 * np.pi / n)
