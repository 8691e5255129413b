"""Desk-scale comparison runs: conditioning modes, filtering, coloring.

Every run is keyed by the digest of its full configuration; results land in
``<results>/<name>.json`` and are reused when the digest matches, so the
acceptance suite can be re-run without retraining.

    python -m pcdiff.experiments --results results/desk
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from pcdiff import io
from pcdiff.config import ExperimentConfig
from pcdiff.data import DataConfig, generate_dataset
from pcdiff.denoiser import PointVoxelNet, save_checkpoint
from pcdiff.evaluation import evaluate_checkpoint
from pcdiff.training import (MODES, Conditioner, TrainConfig, color_config, colorize, new_state,
                             train, train_colorizer)

DESK_RADIUS = 0.06
EXTRA_TAUS = (0.02, 0.05)


def desk_config(mode: str = "projection", seed: int = 0, steps: int = 1500, k: int = 5) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.schedule.T = 100
    cfg.schedule.beta_start = 1e-4
    cfg.schedule.beta_end = 8e-2
    cfg.train = TrainConfig(total_steps=steps, seed=seed)
    cfg.conditioning.mode = mode
    cfg.conditioning.radius_ndc = DESK_RADIUS
    cfg.filter.radius_ndc = DESK_RADIUS
    cfg.filter.strategy = "none"
    cfg.filter.k = k
    cfg.seed = seed
    return cfg.validate()


@dataclass
class DeskPlan:
    steps: int = 1500
    seeds: tuple = (0, 1, 2)
    modes: tuple = MODES
    k: int = 5
    eval_per_family: int = 8
    data_seed: int = 0
    color_steps: int = 1000


_DATA_CACHE: dict = {}


def desk_records(data_cfg: DataConfig, seed: int):
    key = json.dumps([dataclasses.asdict(data_cfg), seed], sort_keys=True)
    if key not in _DATA_CACHE:
        _DATA_CACHE.clear()
        _DATA_CACHE[key] = [rec for _, rec in generate_dataset(data_cfg, seed)]
    return _DATA_CACHE[key]


def split(records, per_family: int):
    train_set = [r for r in records if r.split == "train"]
    evals, seen = [], {}
    for r in records:
        if r.split == "eval" and seen.get(r.family, 0) < per_family:
            evals.append(r)
            seen[r.family] = seen.get(r.family, 0) + 1
    return train_set, evals


def _digest(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _cached(path, digest):
    if os.path.exists(path):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("digest") == digest:
            return doc
    return None


def _stderr(msg):
    print(msg, file=sys.stderr, flush=True)


def run_mode(plan: DeskPlan, mode: str, seed: int, results: str, log=_stderr) -> dict:
    """Train one conditioning mode with one seed and evaluate it on the eval subset."""
    cfg = desk_config(mode, seed, plan.steps, plan.k)
    digest = _digest({"cfg": cfg.to_dict(), "per_family": plan.eval_per_family,
                      "data_seed": plan.data_seed, "taus": EXTRA_TAUS})
    name = f"{mode}-s{seed}"
    path = os.path.join(results, name + ".json")
    doc = _cached(path, digest)
    if doc is not None:
        return doc
    train_set, eval_set = split(desk_records(cfg.data, plan.data_seed), plan.eval_per_family)
    ckpt = os.path.join(results, "ckpt", name + ".ckpt")
    os.makedirs(os.path.dirname(ckpt), exist_ok=True)
    sched = cfg.schedule.build()
    t0 = time.time()
    state = new_state(cfg.model_config(), cfg.train)
    every = max(plan.steps // 10, 1)
    trace = train(train_set, cfg.train, sched, cfg.conditioner(), state,
                  log=lambda s, loss, lr: log(f"[{name}] step {s} loss {loss:.4f}") if s % every == 0 else None)
    save_checkpoint(ckpt, state.net.cfg, state.net.params)
    t1 = time.time()
    report = evaluate_checkpoint(eval_set, state.net, cfg, 0.01, EXTRA_TAUS)
    t2 = time.time()
    losses = [loss for _, loss, _ in trace]
    doc = {"digest": digest, "mode": mode, "seed": seed, "steps": plan.steps,
           "train_seconds": t1 - t0, "eval_seconds": t2 - t1,
           "initial_loss": float(np.mean(losses[:20])), "final_loss": float(np.mean(losses[-100:])),
           "config": cfg.to_dict(), "report": report}
    io.atomic_write(path, json.dumps(doc) + "\n")
    log(f"[{name}] train {t1 - t0:.0f}s eval {t2 - t1:.0f}s mean F {summarize_run(doc)['none']:.4f}")
    return doc


def summarize_run(doc, tau_key: str | None = None) -> dict:
    """Mean F over records for: all candidates averaged, and each selector's pick."""
    def f_of(row):
        return [c["f"] for c in row["candidates"]] if tau_key is None else row[tau_key]
    rows = doc["report"]["records"]
    out = {"none": float(np.mean([np.mean(f_of(r)) for r in rows]))}
    for sel in ("fm", "fa", "oracle"):
        if all(sel in r["select"] for r in rows):
            out[sel] = float(np.mean([f_of(r)[r["select"][sel]] for r in rows]))
    return out


def run_color(plan: DeskPlan, results: str, seed: int = 0, log=_stderr) -> dict:
    """Coloring model vs the constant-mean-color baseline on family-determined albedo."""
    data_cfg = DataConfig(albedo="family")
    cfg = desk_config("projection", seed, plan.color_steps)
    tcfg = TrainConfig(total_steps=plan.color_steps, seed=seed)
    digest = _digest({"data": dataclasses.asdict(data_cfg), "train": dataclasses.asdict(tcfg),
                      "model": cfg.to_dict()["model"], "radius": DESK_RADIUS,
                      "per_family": plan.eval_per_family, "data_seed": plan.data_seed})
    path = os.path.join(results, f"color-s{seed}.json")
    doc = _cached(path, digest)
    if doc is not None:
        return doc
    train_set, eval_set = split(desk_records(data_cfg, plan.data_seed), plan.eval_per_family)
    cond = Conditioner("projection", DESK_RADIUS)
    net = PointVoxelNet(color_config(cfg.model_config()), seed=seed)
    t0 = time.time()
    every = max(plan.color_steps // 10, 1)
    train_colorizer(train_set, tcfg, cond, net,
                    log=lambda s, loss, lr: log(f"[color] step {s} loss {loss:.4f}") if s % every == 0 else None)
    mean_color = np.concatenate([r.cloud.colors for r in train_set]).mean(axis=0)
    model_mse, base_mse = [], []
    for r in eval_set:
        pred = colorize(net, r.cloud, r.image, r.mask, r.camera, cond)
        model_mse.append(float(np.mean((pred.colors - r.cloud.colors) ** 2)))
        base_mse.append(float(np.mean((mean_color - r.cloud.colors) ** 2)))
    doc = {"digest": digest, "seed": seed, "seconds": time.time() - t0,
           "model_mse": float(np.mean(model_mse)), "baseline_mse": float(np.mean(base_mse)),
           "mean_color": mean_color.tolist(), "per_record": {"model": model_mse, "baseline": base_mse}}
    doc["relative_improvement"] = 1.0 - doc["model_mse"] / doc["baseline_mse"]
    io.atomic_write(path, json.dumps(doc) + "\n")
    log(f"[color] model MSE {doc['model_mse']:.5f} baseline {doc['baseline_mse']:.5f}")
    return doc


def run_all(plan: DeskPlan, results: str, log=_stderr, color: bool = True) -> dict:
    os.makedirs(results, exist_ok=True)
    runs = {m: [run_mode(plan, m, s, results, log) for s in plan.seeds] for m in plan.modes}
    out = {"modes": {}, "plan": dataclasses.asdict(plan)}
    for m, docs in runs.items():
        sums = [summarize_run(d) for d in docs]
        entry = {k: float(np.mean([s[k] for s in sums])) for k in ("none", "fm", "fa", "oracle")}
        entry["per_seed"] = [s["none"] for s in sums]
        for tau in EXTRA_TAUS:
            entry[f"none@{tau:g}"] = float(np.mean([summarize_run(d, f"f@{tau:g}")["none"] for d in docs]))
        entry["train_seconds"] = float(sum(d["train_seconds"] for d in docs))
        entry["eval_seconds"] = float(sum(d["eval_seconds"] for d in docs))
        out["modes"][m] = entry
    if color:
        out["color"] = run_color(plan, results, log=log)
    io.atomic_write(os.path.join(results, "summary.json"), json.dumps(out, indent=1) + "\n")
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="desk-scale comparison runs")
    ap.add_argument("--results", default="results/desk")
    ap.add_argument("--steps", type=int, default=DeskPlan.steps)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(DeskPlan.seeds))
    ap.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    ap.add_argument("--eval-per-family", type=int, default=DeskPlan.eval_per_family)
    ap.add_argument("--color-steps", type=int, default=DeskPlan.color_steps)
    ap.add_argument("--no-color", action="store_true")
    args = ap.parse_args(argv)
    plan = DeskPlan(steps=args.steps, seeds=tuple(args.seeds), modes=tuple(args.modes),
                    eval_per_family=args.eval_per_family, color_steps=args.color_steps)
    out = run_all(plan, args.results, color=not args.no_color)
    print(f"{'mode':<20}{'F none':>9}{'F fm':>9}{'F fa':>9}{'F oracle':>10}{'F@0.02':>9}{'F@0.05':>9}")
    for m, e in out["modes"].items():
        print(f"{m:<20}{e['none']:9.4f}{e['fm']:9.4f}{e['fa']:9.4f}{e['oracle']:10.4f}"
              f"{e['none@0.02']:9.4f}{e['none@0.05']:9.4f}")
    if "color" in out:
        c = out["color"]
        print(f"color MSE {c['model_mse']:.5f} vs mean-color {c['baseline_mse']:.5f} "
              f"({100 * c['relative_improvement']:.1f}% lower)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
