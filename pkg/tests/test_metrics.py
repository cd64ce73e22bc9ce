import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pseudorect.core import Box2D, GroundTruthBox, MatchConfig, PseudoBox
from pseudorect.errors import ConfigError
from pseudorect.metrics import (
    ablate,
    ablation_dropped,
    ap50,
    classify_pseudo,
    correct_count,
    kl_divergence,
    mean_kl,
    pseudo_precision,
    spearman,
    summarize,
)

from helpers import det, dset, peaked

B = (0.0, 0.0, 2.0, 2.0)


def gt(c, box=B):
    return GroundTruthBox(c, Box2D(*box))


def pb(c, box=B, conf=0.9):
    return PseudoBox(c, Box2D(*box), conf)


def test_classify_pseudo_examples():
    assert classify_pseudo([pb(0), pb(1, (4, 4, 5, 5))], [gt(0), gt(1, (4, 4, 5, 5))]) == [True, True]
    assert classify_pseudo([pb(1)], [gt(0)]) == [False]
    # IoU 0.4: [0,0,2,2] vs [0,0,2,0.8]
    assert classify_pseudo([pb(0, (0, 0, 2, 0.8))], [gt(0)]) == [False]
    assert classify_pseudo([pb(0)], []) == [False]


def test_classify_pseudo_many_to_one():
    assert classify_pseudo([pb(0), pb(0, (0, 0, 2, 2.1))], [gt(0)]) == [True, True]


def test_precision_and_count_examples():
    g = [gt(0), gt(1, (4, 4, 6, 6))]
    mixed = [pb(0), pb(0), pb(1, (4, 4, 6, 6)), pb(1)]
    assert pseudo_precision(mixed, g) == 0.75
    assert correct_count(mixed, g) == 3
    five = [pb(0)] * 5
    assert pseudo_precision(five, g) == 1.0
    assert correct_count(five, g) == 5
    assert pseudo_precision([], g) is None
    assert correct_count([], g) == 0


def test_ap50_examples():
    g = {0: [gt(0)]}
    assert ap50([dset(peaked(2, 0, 0.9, B))], g) == 1.0
    assert ap50([dset()], g) == 0.0
    two = dset(peaked(2, 0, 0.9, B), peaked(2, 0, 0.8, (5, 5, 6, 6)))
    assert ap50([two], g, style="voc07_11pt") == pytest.approx(1.0)
    assert ap50([two], g, style="all_point") == pytest.approx(1.0)


def test_ap50_fp_first_halves_precision():
    g = {0: [gt(0)]}
    s = dset(peaked(2, 0, 0.9, (5, 5, 6, 6)), peaked(2, 0, 0.8, B))
    assert ap50([s], g, style="all_point") == pytest.approx(0.5)
    assert ap50([s], g, style="voc07_11pt") == pytest.approx(0.5)


def test_ap50_duplicate_is_fp_and_unknown_style():
    g = {0: [gt(0)], 1: [gt(1)]}
    s0 = dset(peaked(2, 0, 0.9, B), peaked(2, 0, 0.8, B))
    s1 = dset(image_id=1)
    assert ap50({0: s0, 1: s1}, g, style="all_point") == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        ap50([s0], g, style="coco")


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100)
def test_ap50_rank_only(seed):
    rng = np.random.default_rng(seed)
    g, sets, rescaled = {}, [], []
    for i in range(4):
        boxes = [(x, 0.0, x + 2.0, 2.0) for x in rng.choice(10, size=2, replace=False) * 3.0]
        g[i] = [gt(int(rng.integers(2)), b) for b in boxes]
        dets, dets2 = [], []
        for _ in range(int(rng.integers(0, 5))):
            b = boxes[int(rng.integers(2))]
            b = (b[0] + float(rng.normal(0, 0.5)), b[1], b[2], b[3])
            s = float(rng.uniform(0.55, 0.95))
            c = int(rng.integers(2))
            dets.append(peaked(2, c, s, b, image_id=i))
            dets2.append(peaked(2, c, s, b, image_id=i, score=s ** 3))
        sets.append(dset(*dets, image_id=i))
        rescaled.append(dset(*dets2, image_id=i))
    for style in ("voc07_11pt", "all_point"):
        assert ap50(sets, g, style) == ap50(rescaled, g, style)


def test_mean_kl_examples():
    a = dset(det([0.3, 0.7], B))
    assert mean_kl(a, a) == 0.0
    eps = 1e-12
    p = dset(det([1 - eps, eps], B))
    q = dset(det([0.5, 0.5], B))
    assert mean_kl(p, q) == pytest.approx(math.log(2), abs=1e-9)
    far = dset(det([0.5, 0.5], (8, 8, 9, 9)))
    assert mean_kl(a, far) == 0.0
    assert mean_kl(dset(), a) == 0.0


@given(st.lists(st.integers(0, 30), min_size=3, max_size=3).filter(lambda v: sum(v) > 0),
       st.lists(st.integers(0, 30), min_size=3, max_size=3).filter(lambda v: sum(v) > 0))
def test_kl_nonnegative(a, b):
    p = [x / sum(a) for x in a]
    q = [x / sum(b) for x in b]
    assert kl_divergence(p, q) >= -1e-12
    assert mean_kl(dset(det(p, B)), dset(det(q, B)), MatchConfig()) >= -1e-12


def test_ablate_examples():
    g = [gt(0), gt(1, (4, 4, 6, 6))]
    tps = [pb(0), pb(1, (4, 4, 6, 6))]
    rng = np.random.default_rng(0)
    for kind in ("none", "discard_fp", "random_fp", "gt_labels"):
        assert ablate(tps, g, kind, rng, 3) == tps
    fp = pb(2)
    assert ablate([tps[0], fp], g, "discard_fp", None) == [tps[0]]
    assert ablation_dropped([tps[0], fp], g, "discard_fp") == [fp]
    assert ablate([fp], g, "gt_labels", None) == [pb(0)]
    ghost = pb(1, (20, 20, 21, 21))
    assert ablate([ghost], g, "gt_labels", None) == []
    assert ablation_dropped([ghost, fp], g, "gt_labels") == [ghost]
    assert ablation_dropped([ghost, fp], g, "random_fp") == []
    with pytest.raises(ConfigError):
        ablate([fp], g, "random_fp", None, 3)
    with pytest.raises(ConfigError):
        ablate([fp], g, "flip", rng, 3)


def test_random_fp_is_uniform():
    rng = np.random.default_rng(1)
    n, c = 10_000, 4
    out = ablate([pb(3)] * n, [gt(0)], "random_fp", rng, c)
    counts = np.bincount([p.class_index for p in out], minlength=c)
    sigma = math.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / c) <= 3 * sigma)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100)
def test_ablation_precision_properties(seed):
    rng = np.random.default_rng(seed)
    g = [gt(int(rng.integers(3)), (x, 0, x + 2, 2)) for x in (0.0, 5.0, 10.0)]
    pseudo = []
    for _ in range(int(rng.integers(1, 8))):
        x = float(rng.choice([0.0, 5.0, 10.0, 20.0])) + float(rng.normal(0, 0.3))
        pseudo.append(pb(int(rng.integers(3)), (x, 0, x + 2, 2)))
    flags = classify_pseudo(pseudo, g)
    if any(flags):
        assert pseudo_precision(ablate(pseudo, g, "discard_fp", None), g) == 1.0
    fixed = ablate(pseudo, g, "gt_labels", None)
    if fixed:
        assert pseudo_precision(fixed, g) == 1.0
    perm = rng.permutation(len(pseudo))
    assert classify_pseudo([pseudo[i] for i in perm], g) == [flags[i] for i in perm]


def test_spearman_and_summarize():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    s = summarize([1.0, 2.0, 3.0])
    assert s == {"mean": 2.0, "std": 1.0, "n": 3}
    assert summarize([]) == {"mean": None, "std": None, "n": 0}
    assert summarize([4.0])["std"] == 0.0
