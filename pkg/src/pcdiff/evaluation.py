"""Sampling plus scoring over a set of records, shared by the CLI and the desk experiments."""
from __future__ import annotations

import os
import zlib

import numpy as np

from pcdiff import io
from pcdiff.filtering import CandidateSet, fa_scores, fm_scores
from pcdiff.metrics import fscore
from pcdiff.training import sample


def record_seeds(seed: int, rec_id: str, k: int) -> list[int]:
    key = zlib.crc32(rec_id.encode())
    return [int(np.random.SeedSequence([seed, key, i]).generate_state(1)[0]) for i in range(k)]


def _means(rows, keys=("precision", "recall", "f")):
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}


def _summarize(rows, tau, strategy):
    fams = sorted({r["family"] for r in rows})
    return {"tau": tau, "strategy": strategy, "records": rows, "mean": _means(rows),
            "per_family": {f: _means([r for r in rows if r["family"] == f]) for f in fams}}


def evaluate_predictions(records, pred_dir, tau: float = 0.01) -> dict:
    """Score ``<pred_dir>/<id>.ply`` against each record's ground truth."""
    rows = []
    for rec in records:
        path = os.path.join(pred_dir, f"{rec.id}.ply")
        pred = io.ply_read(path)
        p, r, f = fscore(pred.positions, rec.cloud.positions, tau)
        rows.append({"id": rec.id, "family": rec.family, "precision": p, "recall": r, "f": f})
    return _summarize(rows, tau, "given")


def score_candidates(rec, clouds, camera_radius: float, tau: float, extra_taus=()) -> dict:
    """Per-candidate F-scores and the index each selector picks."""
    cands = CandidateSet.render(clouds, rec.camera, camera_radius)
    gt = rec.cloud.positions
    scores = [fscore(c, gt, tau) for c in clouds]
    f = np.array([s.f for s in scores])
    out = {"id": rec.id, "family": rec.family,
           "candidates": [{"precision": s.precision, "recall": s.recall, "f": s.f} for s in scores],
           "iou": fm_scores(cands, rec.mask).tolist(),
           "select": {"fm": int(np.argmax(fm_scores(cands, rec.mask))), "oracle": int(np.argmax(f))}}
    if len(clouds) > 1:
        out["select"]["fa"] = int(np.argmax(fa_scores(cands)))
    for extra in extra_taus:
        out[f"f@{extra:g}"] = [fscore(c, gt, extra).f for c in clouds]
    return out


def evaluate_checkpoint(records, net, cfg, tau: float = 0.01, extra_taus=(), log=None) -> dict:
    """Sample K candidates per record, select with ``cfg.filter.strategy`` ('none' averages them)."""
    sched = cfg.schedule.build()
    cond = cfg.conditioner()
    k, strategy = cfg.filter.k, cfg.filter.strategy
    rows = []
    for rec in records:
        seeds = record_seeds(cfg.seed, rec.id, k)
        res = sample(net, rec.image, rec.mask, rec.camera, len(rec.cloud), seeds, sched, cond)
        row = score_candidates(rec, res.clouds, cfg.filter.radius_ndc, tau, extra_taus)
        row["seeds"] = seeds
        cs = row["candidates"]
        if strategy == "none":
            pick = _means(cs)
        else:
            if strategy not in row["select"]:
                raise ValueError(f"strategy {strategy!r} needs more candidates")
            pick = cs[row["select"][strategy]]
        row.update(precision=pick["precision"], recall=pick["recall"], f=pick["f"])
        rows.append(row)
        if log is not None:
            log(rec, row)
    return _summarize(rows, tau, strategy)
