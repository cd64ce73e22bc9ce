"""Box matching metrics and best-match search with virtual-box fallback."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

from .core import Box2D, Box3D, Detection, DetectionSet, MatchConfig
from .errors import GeometryMismatch, MissingAnchor

VIRTUAL = -1


@dataclass(frozen=True)
class MatchResult:
    query_index: int
    matched_index: int
    metric_value: float

    @property
    def is_virtual(self) -> bool:
        return self.matched_index == VIRTUAL


def iou_2d(a: Box2D, b: Box2D) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def center_distance_metric(a: Box3D, b: Box3D) -> float:
    """Negative Euclidean distance between box centers."""
    return -math.dist(a.center, b.center)


def anchor_metric(a: Detection, b: Detection) -> float:
    if a.anchor is None or b.anchor is None:
        raise MissingAnchor("anchor metric needs an anchor id on both detections")
    return 1.0 if a.anchor.anchor_id == b.anchor.anchor_id else 0.0


def _check_geometry(d: Detection, cfg: MatchConfig) -> None:
    if cfg.metric_kind == "iou2d" and not isinstance(d.geometry, Box2D):
        raise GeometryMismatch("iou2d metric needs 2D boxes")
    if cfg.metric_kind == "center3d" and not isinstance(d.geometry, Box3D):
        raise GeometryMismatch("center3d metric needs 3D boxes")


def best_match(query: Detection, candidates: DetectionSet, cfg: MatchConfig,
               query_index: int = 0) -> MatchResult:
    """Highest-metric candidate for ``query``; lowest index wins ties.

    Falls back to a virtual counterpart (a copy of the query, metric 1) when
    no candidate is acceptable.
    """
    _check_geometry(query, cfg)
    virtual = MatchResult(query_index, VIRTUAL, 1.0)
    best_j = VIRTUAL
    best_v = -math.inf
    kind = cfg.metric_kind
    for j, cand in enumerate(candidates.detections):
        _check_geometry(cand, cfg)
        if kind == "iou2d":
            v = iou_2d(query.geometry, cand.geometry)
        elif kind == "anchor":
            v = anchor_metric(query, cand)
        else:
            v = center_distance_metric(query.geometry, cand.geometry)
        if v > best_v:
            best_j, best_v = j, v
    if best_j == VIRTUAL:
        return virtual
    if kind == "iou2d" and best_v < cfg.delta:
        return virtual
    if kind == "anchor" and best_v < 1.0:
        return virtual
    if kind == "center3d" and -best_v > cfg.max_center_distance:
        return virtual
    return MatchResult(query_index, best_j, best_v)


def match_sets(set_a: DetectionSet, set_b: DetectionSet, cfg: MatchConfig) -> List[MatchResult]:
    """Independent best match for every box of ``set_a`` (many-to-one allowed)."""
    return [best_match(q, set_b, cfg, i) for i, q in enumerate(set_a.detections)]
