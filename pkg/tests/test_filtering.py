import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_fscore, painter_raster_fast
from pcdiff.filtering import (CandidateSet, fa_scores, filter_fa, filter_fm, filter_oracle, filter_report,
                              iou, silhouette)
from pcdiff.geometry import PointCloud, look_at
from pcdiff.projection import radius_in_pixels

CAM = look_at((0, -2.0, 0.0), fx=30, fy=30, cx=15.5, cy=15.5, width=32, height=32)


def masks(*sets, shape=(2, 2)):
    out = []
    for s in sets:
        m = np.zeros(shape, bool)
        for rc in s:
            m[rc] = True
        out.append(m)
    return out


def test_iou_examples():
    a, b = masks({(0, 0), (0, 1)}, {(0, 1), (1, 1)})
    assert iou(a, b) == pytest.approx(1 / 3)
    assert iou(a, a) == 1.0
    assert iou(*masks({(0, 0)}, {(1, 1)})) == 0.0
    assert iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    with pytest.raises(ValueError):
        iou(np.zeros((2, 2)), np.zeros((2, 3)))


def test_silhouette_examples():
    assert not silhouette(PointCloud([[0, -3.0, 0]]), CAM).any()  # behind the camera
    sil = silhouette(PointCloud([[0, 0, 0.0]]), CAM, 0.2)
    rows, cols = np.nonzero(sil)
    assert sil.sum() > 1
    assert rows.mean() == pytest.approx(15.5) and cols.mean() == pytest.approx(15.5)


def test_silhouette_matches_raster_oracle():
    rng = np.random.default_rng(0)
    for _ in range(5):
        pts = rng.uniform(-0.5, 0.5, (60, 3))
        u, v, d, ok = CAM.project(pts)
        owner, _ = painter_raster_fast(u, v, d, ok, radius_in_pixels(CAM, 0.05), 32, 32)
        assert np.array_equal(silhouette(PointCloud(pts), CAM, 0.05), owner >= 0)


def test_fa_hand_table():
    # index 0 is disjoint from the identical pair 1, 2: scores (0, 1/2, 1/2)
    sil = masks({(0, 0)}, {(1, 1)}, {(1, 1)})
    cands = CandidateSet([None] * 3, sil)
    assert np.allclose(fa_scores(cands), [0, 0.5, 0.5])
    assert filter_fa(cands) == 1


def test_fa_ties_and_errors():
    same = masks({(0, 0)}, {(0, 0)}, {(0, 0)})
    assert filter_fa(CandidateSet([None] * 3, same)) == 0
    pair = CandidateSet([None] * 2, masks({(0, 0)}, {(0, 0), (1, 0)}))
    s = fa_scores(pair)
    assert s[0] == s[1] and filter_fa(pair) == 0
    with pytest.raises(ValueError):
        filter_fa(CandidateSet([None], masks({(0, 0)})))


def test_candidate_set_checks():
    with pytest.raises(ValueError):
        CandidateSet([], [])
    with pytest.raises(ValueError):
        CandidateSet([None, None], masks({(0, 0)}))
    with pytest.raises(ValueError):
        CandidateSet([None, None], [np.zeros((2, 2)), np.zeros((3, 2))])


def test_fm_examples():
    sil = masks({(0, 0)}, {(0, 0), (1, 1)}, {(1, 0)})
    target = sil[1].copy()
    assert filter_fm(CandidateSet([None], sil[:1]), target) == 0
    assert filter_fm(CandidateSet([None] * 3, sil), target) == 1
    with pytest.raises(ValueError):
        filter_fm(CandidateSet([None], sil[:1]), np.zeros((3, 3)))


def random_cands(rng, k=5, n=80):
    gt = rng.uniform(-0.4, 0.4, (n, 3))
    clouds = [gt + rng.normal(0, s, gt.shape) for s in rng.uniform(0.002, 0.08, k)]
    return CandidateSet.render(clouds, CAM, 0.03, seeds=range(k)), gt


def test_selectors_match_exhaustive_scoring():
    rng = np.random.default_rng(1)
    for _ in range(10):
        cands, gt = random_cands(rng)
        mask = silhouette(PointCloud(gt), CAM, 0.03)
        brute_iou = [np.sum(s & mask) / np.sum(s | mask) for s in cands.silhouettes]
        assert filter_fm(cands, mask) == int(np.argmax(brute_iou))
        table = [brute_fscore(c, gt, 0.02)[2] for c in cands.clouds]
        assert filter_oracle(cands, gt, 0.02) == int(np.argmax(table))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 6))
def test_oracle_dominates_and_indices_valid(seed, k):
    rng = np.random.default_rng(seed)
    cands, gt = random_cands(rng, k, 40)
    tau = 0.03
    best = brute_fscore(cands.clouds[filter_oracle(cands, gt, tau)], gt, tau)[2]
    assert all(best >= brute_fscore(c, gt, tau)[2] for c in cands.clouds)
    mask = silhouette(PointCloud(gt), CAM, 0.03)
    assert 0 <= filter_fm(cands, mask) < k
    if k >= 2:
        assert 0 <= filter_fa(cands) < k
    # fm picks the same silhouette after a shuffle (up to ties)
    perm = rng.permutation(k)
    shuffled = CandidateSet([cands.clouds[i] for i in perm], [cands.silhouettes[i] for i in perm])
    a = iou(cands.silhouettes[filter_fm(cands, mask)], mask)
    b = iou(shuffled.silhouettes[filter_fm(shuffled, mask)], mask)
    assert a == b


def test_oracle_picks_exact_copy():
    rng = np.random.default_rng(2)
    cands, gt = random_cands(rng)
    cands.clouds[3] = gt.copy()
    assert filter_oracle(cands, gt) == 3


def test_report_shape():
    rng = np.random.default_rng(3)
    cands, gt = random_cands(rng)
    mask = silhouette(PointCloud(gt), CAM, 0.03)
    rep = filter_report(cands, "fm", mask=mask, gt=gt)
    assert rep["selected"] == filter_fm(cands, mask)
    assert [c["seed"] for c in rep["candidates"]] == list(range(5))
    assert all("fscore" in c and "iou" in c for c in rep["candidates"])
    with pytest.raises(ValueError):
        filter_report(cands, "fm")
    with pytest.raises(ValueError):
        filter_report(cands, "oracle")
    with pytest.raises(ValueError):
        filter_report(cands, "best")
    assert filter_report(cands, "fa")["selected"] == filter_fa(cands)
