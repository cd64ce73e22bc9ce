"""Weighted boxes fusion over detection sets from several detectors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Sequence, Tuple

from .core import Box2D, ClassDistribution, Detection, DetectionSet, argmax_class, ranking_score
from .errors import Unsupported3D, ValidationError
from .matching import iou_2d


@dataclass(frozen=True)
class FusionConfig:
    cluster_iou: float = 0.55
    model_weights: Tuple[float, ...] | None = None
    score_mode: Literal["mean", "weighted_mean"] = "mean"

    def __post_init__(self):
        if not (0.0 < self.cluster_iou < 1.0):
            raise ValidationError(f"cluster_iou {self.cluster_iou!r} outside (0, 1)")
        if self.model_weights is not None:
            object.__setattr__(self, "model_weights", tuple(float(w) for w in self.model_weights))
            if not all(w > 0 for w in self.model_weights):
                raise ValidationError("model weights must be positive")
        if self.score_mode not in ("mean", "weighted_mean"):
            raise ValidationError(f"unknown score mode {self.score_mode!r}")

    def weights_for(self, n_models: int) -> Tuple[float, ...]:
        if self.model_weights is None:
            return (1.0,) * n_models
        if len(self.model_weights) != n_models:
            raise ValidationError(
                f"{len(self.model_weights)} model weights for {n_models} detection sets"
            )
        return self.model_weights


@dataclass
class _Cluster:
    members: List[Tuple[Detection, float, float]] = field(default_factory=list)  # det, score, weight
    box: Box2D | None = None

    def refresh(self) -> None:
        self.box = _fused_box([(d.geometry, s * w) for d, s, w in self.members])


def _fused_box(weighted: Sequence[Tuple[Box2D, float]]) -> Box2D:
    total = math.fsum(w for _, w in weighted)
    coords = []
    for k in range(4):
        vals = [b.as_tuple()[k] for b, _ in weighted]
        v = math.fsum(b.as_tuple()[k] * w for b, w in weighted) / total
        # rounding can step outside the member envelope
        coords.append(min(max(v, min(vals)), max(vals)))
    return Box2D(*coords)


def wbf_fuse(sets: Sequence[DetectionSet], cfg: FusionConfig = FusionConfig()) -> DetectionSet:
    """Fuse per-detector predictions for one image.

    Boxes are clustered per class in descending score order; each cluster is
    replaced by its score-weighted mean box with a score scaled down when
    fewer detectors than available contributed to it.
    """
    if not sets:
        raise ValidationError("wbf_fuse needs at least one detection set")
    image_id = sets[0].image_id
    n_models = len(sets)
    weights = cfg.weights_for(n_models)

    entries = []
    for m, dets in enumerate(sets):
        for i, d in enumerate(dets.detections):
            if not isinstance(d.geometry, Box2D):
                raise Unsupported3D("weighted boxes fusion is only defined for 2D boxes")
            entries.append((ranking_score(d), m, i, d))
    # stable: ties keep set order, then position
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))

    clusters: Dict[int, List[_Cluster]] = {}
    for score, m, _, d in entries:
        cls = argmax_class(d)
        bucket = clusters.setdefault(cls, [])
        for c in bucket:
            if iou_2d(c.box, d.geometry) >= cfg.cluster_iou:
                c.members.append((d, score, weights[m]))
                c.refresh()
                break
        else:
            c = _Cluster([(d, score, weights[m])])
            c.refresh()
            bucket.append(c)

    fused = []
    for cls in sorted(clusters):
        for c in clusters[cls]:
            scores = [s for _, s, _ in c.members]
            n = len(c.members)
            if cfg.score_mode == "mean":
                score = math.fsum(scores) / n
            else:
                ws = [w for _, _, w in c.members]
                score = math.fsum(s * w for s, w in zip(scores, ws)) / math.fsum(ws)
            score *= min(n, n_models) / n_models
            if cfg.score_mode == "weighted_mean":
                score = min(score, 1.0)  # a weighted mean of scores <= 1 can round above 1
            dist = _mean_dist([d.dist for d, _, _ in c.members])
            fused.append(Detection(c.box, dist, None, -1, image_id, score))
    fused.sort(key=lambda d: -d.score)
    return DetectionSet(image_id, tuple(fused))


def _mean_dist(dists: Sequence[ClassDistribution]) -> ClassDistribution:
    n = len(dists)
    probs = [math.fsum(col) / n for col in zip(*(d.probs for d in dists))]
    total = math.fsum(probs)
    return ClassDistribution(tuple(p / total for p in probs))
