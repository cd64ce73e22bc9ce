from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pseudorect.core import Box2D, Box3D, ClassDistribution, Detection, DetectionSet, MatchConfig
from pseudorect.errors import GeometryMismatch, MissingAnchor
from pseudorect.matching import (
    VIRTUAL,
    anchor_metric,
    best_match,
    center_distance_metric,
    iou_2d,
    match_sets,
)

import oracles
from helpers import det, dset
from instances import DELTAS, random_instance, to_detection, to_set


def test_iou_examples():
    assert iou_2d(Box2D(0, 0, 1, 1), Box2D(0, 0, 1, 1)) == 1.0
    assert iou_2d(Box2D(0, 0, 1, 1), Box2D(2, 2, 3, 3)) == 0.0
    assert iou_2d(Box2D(0, 0, 2, 2), Box2D(1, 0, 3, 2)) == pytest.approx(1 / 3, abs=1e-15)


def test_iou_touching_edges_is_zero():
    assert iou_2d(Box2D(0, 0, 1, 1), Box2D(1, 0, 2, 1)) == 0.0


def _box3(c):
    return Box3D(c, (1, 1, 1))


def test_center_distance_examples():
    assert center_distance_metric(_box3((0, 0, 0)), _box3((0, 0, 0))) == 0.0
    assert center_distance_metric(_box3((0, 0, 0)), _box3((3, 4, 0))) == -5.0
    assert center_distance_metric(_box3((1, 1, 1)), _box3((1, 1, 2))) == -1.0


def test_anchor_metric_examples():
    assert anchor_metric(det([0.5, 0.5], anchor=7), det([0.5, 0.5], anchor=7)) == 1.0
    assert anchor_metric(det([0.5, 0.5], anchor=7), det([0.5, 0.5], anchor=8)) == 0.0
    assert anchor_metric(det([0.5, 0.5], anchor=0), det([0.5, 0.5], anchor=0)) == 1.0
    with pytest.raises(MissingAnchor):
        anchor_metric(det([0.5, 0.5], anchor=1), det([0.5, 0.5]))


def _query_with_ious(ious, delta):
    """Query [0,0,1,1] and candidates [0,0,w,1] with IoU exactly 1/w."""
    q = det([0.5, 0.5])
    cands = dset(*[det([0.5, 0.5], (0, 0, 1 / v, 1)) for v in ious])
    return best_match(q, cands, MatchConfig(delta=delta))


def test_best_match_examples():
    r = _query_with_ious([0.625, 0.8], 0.5)
    assert (r.matched_index, r.metric_value) == (1, pytest.approx(0.8))
    r = _query_with_ious([0.3, 0.4], 0.5)
    assert r.is_virtual and r.matched_index == VIRTUAL and r.metric_value == 1.0
    r = _query_with_ious([0.5, 0.5], 0.4)
    assert r.matched_index == 0


def test_best_match_empty_is_virtual():
    r = best_match(det([0.5, 0.5]), dset(), MatchConfig())
    assert r.is_virtual and r.metric_value == 1.0


def test_best_match_anchor_fallback():
    cfg = MatchConfig(metric_kind="anchor")
    cands = dset(det([0.5, 0.5], anchor=3), det([0.5, 0.5], anchor=5), det([0.5, 0.5], anchor=5))
    assert best_match(det([0.5, 0.5], anchor=5), cands, cfg).matched_index == 1
    assert best_match(det([0.5, 0.5], anchor=4), cands, cfg).is_virtual


def _d3(c):
    return Detection(Box3D(c, (1, 1, 1)), ClassDistribution((0.5, 0.5)))


def test_best_match_center3d():
    cands = DetectionSet(0, (_d3((5, 0, 0)), _d3((1, 0, 0))))
    r = best_match(_d3((0, 0, 0)), cands, MatchConfig(metric_kind="center3d"))
    assert (r.matched_index, r.metric_value) == (1, -1.0)
    r = best_match(_d3((0, 0, 0)), cands, MatchConfig(metric_kind="center3d", max_center_distance=0.5))
    assert r.is_virtual
    assert best_match(_d3((0, 0, 0)), DetectionSet(0, ()), MatchConfig(metric_kind="center3d")).is_virtual


def test_geometry_mismatch():
    with pytest.raises(GeometryMismatch):
        best_match(_d3((0, 0, 0)), DetectionSet(0, ()), MatchConfig())
    with pytest.raises(GeometryMismatch):
        best_match(det([0.5, 0.5]), dset(), MatchConfig(metric_kind="center3d"))


def test_match_sets_examples():
    assert match_sets(dset(), dset(det([0.5, 0.5])), MatchConfig()) == []
    a = dset(det([0.5, 0.5], (0, 0, 1, 1)), det([0.5, 0.5], (0, 0, 1.1, 1)), det([0.5, 0.5], (9, 9, 10, 10)))
    b = dset(det([0.5, 0.5], (0, 0, 1, 1)), det([0.5, 0.5], (5, 5, 6, 6)))
    res = match_sets(a, b, MatchConfig())
    assert len(res) == 3
    assert [r.matched_index for r in res] == [0, 0, VIRTUAL]
    assert [r.query_index for r in res] == [0, 1, 2]


coord = st.integers(0, 40)
size = st.integers(1, 20)


@st.composite
def boxes(draw):
    x, y, w, h = draw(coord), draw(coord), draw(size), draw(size)
    return Box2D(x / 4, y / 4, (x + w) / 4, (y + h) / 4)


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou_2d(a, b)
    assert v == iou_2d(b, a)
    assert 0.0 <= v <= 1.0
    assert iou_2d(a, a) == 1.0


@given(st.integers(0, 2**32 - 1), st.sampled_from(DELTAS))
@settings(max_examples=200)
def test_best_match_against_scan(seed, delta):
    rng = np.random.default_rng(seed)
    _, (qs, cands) = random_instance(rng, max_boxes=16)
    cset = to_set(cands)
    cfg = MatchConfig(delta=delta)
    for q in qs:
        r = best_match(to_detection(q), cset, cfg)
        j = oracles.scan(q, cands, Fraction(delta))
        assert r.matched_index == (VIRTUAL if j is None else j)
        if not r.is_virtual:
            assert r.metric_value >= delta
    assert len(match_sets(to_set(qs), cset, cfg)) == len(qs)
