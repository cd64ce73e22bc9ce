"""Pseudo-label generation strategies.

Every pairwise strategy is one-directional: it produces the pseudo labels for
the detector that produced ``set_a``. Swap the arguments to get the labels for
the other detector.
"""

from __future__ import annotations

import math
from typing import Dict, List, Literal, Sequence

from .core import (
    ClassDistribution,
    Detection,
    DetectionSet,
    MatchConfig,
    PseudoBox,
    argmax_class,
    argmax_index,
    confidence,
    mean_geometry,
)
from .errors import ConfigError
from .matching import match_sets

StrategyKind = Literal[
    "self_label", "cross_rectify", "co_rectify", "cps", "intersection", "difference", "majority"
]
STRATEGIES = ("self_label", "cross_rectify", "co_rectify", "cps", "intersection", "difference",
              "majority")
PAIR_STRATEGIES = ("cross_rectify", "co_rectify", "cps", "intersection", "difference")


def threshold_filter(dets: DetectionSet, tau: float) -> DetectionSet:
    """Keep detections whose confidence is strictly above ``tau``."""
    kept = tuple(d for d in dets.detections if confidence(d) > tau)
    return DetectionSet(dets.image_id, kept)


def _own(d: Detection) -> PseudoBox:
    return PseudoBox(argmax_class(d), d.geometry, confidence(d))


def self_label(dets: DetectionSet, tau: float) -> List[PseudoBox]:
    return [_own(d) for d in threshold_filter(dets, tau).detections]


def _matched_pairs(set_a: DetectionSet, set_b: DetectionSet, tau: float, cfg: MatchConfig):
    """Yield ``(query, counterpart_or_None)`` over the thresholded query set."""
    ya = threshold_filter(set_a, tau)
    yb = threshold_filter(set_b, tau)
    for m in match_sets(ya, yb, cfg):
        q = ya.detections[m.query_index]
        if m.is_virtual:
            if cfg.on_no_match == "drop":
                continue
            yield q, None
        else:
            yield q, yb.detections[m.matched_index]


def cross_rectify_pair(set_a: DetectionSet, set_b: DetectionSet, tau: float,
                       cfg: MatchConfig) -> List[PseudoBox]:
    """Keep the more confident member of each matched pair.

    The counterpart only wins on a strictly higher confidence; a virtual
    counterpart equals the query, so the query's own prediction is kept.
    """
    out = []
    for q, m in _matched_pairs(set_a, set_b, tau, cfg):
        if m is not None and confidence(q) < confidence(m):
            out.append(_own(m))
        else:
            out.append(_own(q))
    return out


def average_distributions(p: ClassDistribution, q: ClassDistribution) -> ClassDistribution:
    return ClassDistribution(tuple((a + b) / 2.0 for a, b in zip(p.probs, q.probs)))


def co_rectify_pair(set_a: DetectionSet, set_b: DetectionSet, tau: float,
                    cfg: MatchConfig) -> List[PseudoBox]:
    """Average the probabilities and coordinates of each matched pair."""
    out = []
    for q, m in _matched_pairs(set_a, set_b, tau, cfg):
        if m is None:
            out.append(_own(q))
            continue
        avg = average_distributions(q.dist, m.dist)
        out.append(PseudoBox(argmax_index(avg.probs), mean_geometry([q.geometry, m.geometry]),
                             max(avg.probs)))
    return out


def cps_label(set_other: DetectionSet, tau: float) -> List[PseudoBox]:
    """Cross pseudo supervision: the other detector's thresholded predictions."""
    return self_label(set_other, tau)


def intersection_label(set_a: DetectionSet, set_b: DetectionSet, tau: float,
                       cfg: MatchConfig) -> List[PseudoBox]:
    """Matched pairs whose members agree on the class; geometry from ``set_a``."""
    out = []
    for q, m in _matched_pairs(set_a, set_b, tau, cfg):
        if m is not None and argmax_class(q) == argmax_class(m):
            out.append(_own(q))
    return out


def difference_label(set_a: DetectionSet, set_b: DetectionSet, tau: float, cfg: MatchConfig,
                     label_source: Literal["query", "counterpart"] = "query") -> List[PseudoBox]:
    """Matched pairs whose members disagree; geometry from ``set_a``."""
    out = []
    for q, m in _matched_pairs(set_a, set_b, tau, cfg):
        if m is None or argmax_class(q) == argmax_class(m):
            continue
        if label_source == "query":
            out.append(_own(q))
        else:
            out.append(PseudoBox(argmax_class(m), q.geometry, confidence(m)))
    return out


def _plurality(votes: Sequence[Detection]) -> tuple[int, float]:
    """Winning class and its mean confidence.

    Plurality first, then highest mean confidence, then lowest class index.
    """
    by_class: Dict[int, List[float]] = {}
    for d in votes:
        by_class.setdefault(argmax_class(d), []).append(confidence(d))
    ranked = sorted(
        by_class.items(),
        key=lambda kv: (-len(kv[1]), -(math.fsum(kv[1]) / len(kv[1])), kv[0]),
    )
    cls, confs = ranked[0]
    return cls, math.fsum(confs) / len(confs)


def majority_rectify(sets: Sequence[DetectionSet], tau: float,
                     cfg: MatchConfig) -> List[PseudoBox]:
    """Re-label each box of ``sets[0]`` by majority vote over all detectors.

    Geometry is the coordinatewise mean of the query and its best match in
    every other set (a virtual match contributes the query itself).
    """
    if len(sets) < 2:
        raise ConfigError("majority rectification needs at least two detection sets")
    ya = threshold_filter(sets[0], tau)
    others = [threshold_filter(s, tau) for s in sets[1:]]
    per_set = [match_sets(ya, yb, cfg) for yb in others]
    out = []
    for i, q in enumerate(ya.detections):
        votes = [q]
        dropped = False
        for yb, matches in zip(others, per_set):
            m = matches[i]
            if m.is_virtual:
                if cfg.on_no_match == "drop":
                    dropped = True
                    break
                votes.append(q)
            else:
                votes.append(yb.detections[m.matched_index])
        if dropped:
            continue
        cls, conf = _plurality(votes)
        out.append(PseudoBox(cls, mean_geometry([v.geometry for v in votes]), conf))
    return out


def pseudo_labels(kind: str, sets: Sequence[DetectionSet], index: int, tau: float,
                  cfg: MatchConfig) -> List[PseudoBox]:
    """Pseudo labels for detector ``index`` given every detector's predictions."""
    if kind not in STRATEGIES:
        raise ConfigError(f"unknown strategy {kind!r}")
    own = sets[index]
    if kind == "self_label":
        return self_label(own, tau)
    if kind == "majority":
        rest = [s for j, s in enumerate(sets) if j != index]
        return majority_rectify([own, *rest], tau, cfg)
    if len(sets) != 2:
        raise ConfigError(f"strategy {kind!r} needs exactly two detectors, got {len(sets)}")
    other = sets[1 - index]
    if kind == "cross_rectify":
        return cross_rectify_pair(own, other, tau, cfg)
    if kind == "co_rectify":
        return co_rectify_pair(own, other, tau, cfg)
    if kind == "cps":
        return cps_label(other, tau)
    if kind == "intersection":
        return intersection_label(own, other, tau, cfg)
    return difference_label(own, other, tau, cfg)
