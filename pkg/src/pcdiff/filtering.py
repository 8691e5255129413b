"""Choosing one reconstruction out of several sampled candidates.

``fm`` scores silhouettes against the input mask, ``fa`` scores each
candidate by its mean IoU with the others, and ``oracle`` uses the F-score
against ground truth (an upper bound, not usable at test time).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pcdiff.geometry import CameraView
from pcdiff.metrics import fscore
from pcdiff.projection import DEFAULT_RADIUS, rasterize

STRATEGIES = ("fm", "fa", "oracle")


def silhouette(cloud, camera: CameraView, radius_ndc: float = DEFAULT_RADIUS) -> np.ndarray:
    """Pixels covered by any point splatted as a disk."""
    return rasterize(cloud, camera, radius_ndc).covered


def iou(a, b) -> float:
    """|a & b| / |a | b|, with two empty masks counting as identical."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


@dataclass
class CandidateSet:
    clouds: list
    silhouettes: list
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        if not self.clouds:
            raise ValueError("candidate set is empty")
        if len(self.silhouettes) != len(self.clouds):
            raise ValueError("need one silhouette per candidate")
        shapes = {np.shape(s) for s in self.silhouettes}
        if len(shapes) != 1:
            raise ValueError("silhouettes differ in size")

    def __len__(self):
        return len(self.clouds)

    @classmethod
    def render(cls, clouds, camera: CameraView, radius_ndc: float = DEFAULT_RADIUS, seeds=()):
        return cls(list(clouds), [silhouette(c, camera, radius_ndc) for c in clouds], list(seeds))


def fm_scores(cands: CandidateSet, mask) -> np.ndarray:
    return np.array([iou(s, mask) for s in cands.silhouettes])


def fa_scores(cands: CandidateSet) -> np.ndarray:
    k = len(cands)
    if k < 2:
        raise ValueError("agreement filtering needs at least two candidates")
    table = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            table[i, j] = table[j, i] = iou(cands.silhouettes[i], cands.silhouettes[j])
    return (table.sum(axis=1) - 1.0) / (k - 1)


def oracle_scores(cands: CandidateSet, gt, tau: float = 0.01) -> np.ndarray:
    return np.array([fscore(c, gt, tau).f for c in cands.clouds])


def filter_fm(cands: CandidateSet, mask) -> int:
    return int(np.argmax(fm_scores(cands, mask)))


def filter_fa(cands: CandidateSet) -> int:
    return int(np.argmax(fa_scores(cands)))


def filter_oracle(cands: CandidateSet, gt, tau: float = 0.01) -> int:
    return int(np.argmax(oracle_scores(cands, gt, tau)))


def filter_report(cands: CandidateSet, strategy: str, mask=None, gt=None, tau: float = 0.01) -> dict:
    """Per-candidate scores and the selected index, as a JSON-ready dict."""
    if strategy == "fm":
        if mask is None:
            raise ValueError("fm filtering needs the input mask")
        scores, key = fm_scores(cands, mask), "iou"
    elif strategy == "fa":
        scores, key = fa_scores(cands), "mean_iou"
    elif strategy == "oracle":
        if gt is None:
            raise ValueError("oracle filtering needs the ground-truth cloud")
        scores, key = oracle_scores(cands, gt, tau), "fscore"
    else:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    rows = []
    for i, s in enumerate(scores):
        row = {"index": i, key: float(s)}
        if i < len(cands.seeds):
            row["seed"] = int(cands.seeds[i])
        if gt is not None and strategy != "oracle":
            row["fscore"] = fscore(cands.clouds[i], gt, tau).f
        rows.append(row)
    out = {"strategy": strategy, "selected": int(np.argmax(scores)), "candidates": rows}
    if strategy == "oracle" or gt is not None:
        out["tau"] = tau
    return out
