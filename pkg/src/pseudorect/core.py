"""Domain types: boxes, class distributions, detections, pseudo labels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Literal, Sequence, Tuple, Union

from .errors import GeometryMismatch, ValidationError

PROB_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ClassDistribution:
    """Foreground-only class probabilities (background already stripped)."""

    probs: Tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) < 2:
            raise ValidationError(f"need at least 2 classes, got {len(probs)}")
        for p in probs:
            if not (0.0 <= p <= 1.0):
                raise ValidationError(f"probability {p!r} outside [0, 1]")
        total = math.fsum(probs)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValidationError(f"probabilities sum to {total!r}, expected 1")

    @property
    def num_classes(self) -> int:
        return len(self.probs)

    @classmethod
    def peaked(cls, num_classes: int, class_index: int, score: float) -> "ClassDistribution":
        """`score` on one class, the remaining mass spread uniformly over the others."""
        rest = (1.0 - score) / (num_classes - 1)
        return cls(tuple(score if k == class_index else rest for k in range(num_classes)))

    def __len__(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class Box2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite box coordinates {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(f"degenerate box {vals}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box2D":
        return cls(x, y, x + w, y + h)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self) -> Tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Box3D:
    center: Tuple[float, float, float]
    size: Tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        if len(center) != 3 or len(size) != 3:
            raise ValidationError("3D box needs 3 center and 3 size components")
        if not all(math.isfinite(v) for v in center + size + (self.yaw,)):
            raise ValidationError("non-finite 3D box")
        if not all(s > 0 for s in size):
            raise ValidationError(f"3D box sizes must be positive, got {size}")

    def as_tuple(self) -> Tuple[float, ...]:
        return self.center + self.size + (self.yaw,)


Geometry = Union[Box2D, Box3D]


@dataclass(frozen=True)
class AnchorRef:
    anchor_id: int

    def __post_init__(self):
        if self.anchor_id < 0:
            raise ValidationError(f"anchor id must be non-negative, got {self.anchor_id}")


@dataclass(frozen=True)
class Detection:
    """One predicted box.

    ``score`` is an optional ranking score used only by evaluation and fusion
    (fused boxes carry a rescaled score that may fall below ``1/C``, which a
    foreground distribution cannot express). Rectification always works from
    ``dist``.
    """

    geometry: Geometry
    dist: ClassDistribution
    anchor: AnchorRef | None = None
    detector_id: int = 0
    image_id: int = 0
    score: float | None = None

    def __post_init__(self):
        if not isinstance(self.geometry, (Box2D, Box3D)):
            raise ValidationError(f"unsupported geometry {type(self.geometry).__name__}")
        if self.score is not None and not (0.0 < self.score <= 1.0):
            raise ValidationError(f"score {self.score!r} outside (0, 1]")


@dataclass(frozen=True)
class DetectionSet:
    image_id: int
    detections: Tuple[Detection, ...] = ()

    def __post_init__(self):
        dets = tuple(self.detections)
        object.__setattr__(self, "detections", dets)
        if dets:
            kind = type(dets[0].geometry)
            for d in dets:
                if d.image_id != self.image_id:
                    raise ValidationError(
                        f"detection for image {d.image_id} in set for image {self.image_id}"
                    )
                if type(d.geometry) is not kind:
                    raise GeometryMismatch("detection set mixes 2D and 3D geometry")

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self) -> Iterator[Detection]:
        return iter(self.detections)

    def __getitem__(self, i: int) -> Detection:
        return self.detections[i]


@dataclass(frozen=True)
class PseudoBox:
    class_index: int
    geometry: Geometry
    source_confidence: float = 1.0

    def __post_init__(self):
        if self.class_index < 0:
            raise ValidationError(f"negative class index {self.class_index}")
        if not (0.0 < self.source_confidence <= 1.0):
            raise ValidationError(f"source confidence {self.source_confidence!r} outside (0, 1]")


@dataclass(frozen=True)
class GroundTruthBox:
    class_index: int
    geometry: Geometry

    def __post_init__(self):
        if self.class_index < 0:
            raise ValidationError(f"negative class index {self.class_index}")


MetricKind = Literal["iou2d", "anchor", "center3d"]


@dataclass(frozen=True)
class MatchConfig:
    """Matching metric selection.

    ``on_no_match`` chooses what happens to a query without an acceptable
    counterpart: ``"virtual"`` pairs it with a copy of itself, ``"drop"``
    removes it from the rectified output.
    """

    metric_kind: MetricKind = "iou2d"
    delta: float = 0.5
    max_center_distance: float = math.inf
    on_no_match: Literal["virtual", "drop"] = "virtual"

    def __post_init__(self):
        if self.metric_kind not in ("iou2d", "anchor", "center3d"):
            raise ValidationError(f"unknown metric kind {self.metric_kind!r}")
        if not (0.0 <= self.delta <= 1.0):
            raise ValidationError(f"delta {self.delta!r} outside [0, 1]")
        if not self.max_center_distance > 0:
            raise ValidationError("max_center_distance must be positive")
        if self.on_no_match not in ("virtual", "drop"):
            raise ValidationError(f"unknown on_no_match {self.on_no_match!r}")


def confidence(d: Detection) -> float:
    return max(d.dist.probs)


def argmax_index(probs: Sequence[float]) -> int:
    """Index of the largest entry; ties go to the lowest index."""
    best = 0
    for k in range(1, len(probs)):
        if probs[k] > probs[best]:
            best = k
    return best


def argmax_class(d: Detection) -> int:
    return argmax_index(d.dist.probs)


def ranking_score(d: Detection) -> float:
    """Score used to rank detections for evaluation and fusion."""
    return d.score if d.score is not None else confidence(d)


def mean_geometry(boxes: Sequence[Geometry]) -> Geometry:
    """Coordinatewise mean of homogeneous boxes (exactly rounded sums)."""
    n = len(boxes)
    first = boxes[0]
    if isinstance(first, Box2D):
        if not all(isinstance(b, Box2D) for b in boxes):
            raise GeometryMismatch("cannot average 2D and 3D boxes")
        cols = zip(*(b.as_tuple() for b in boxes))
        return Box2D(*(math.fsum(c) / n for c in cols))
    if not all(isinstance(b, Box3D) for b in boxes):
        raise GeometryMismatch("cannot average 2D and 3D boxes")
    cols = [math.fsum(c) / n for c in zip(*(b.as_tuple() for b in boxes))]
    return Box3D(tuple(cols[0:3]), tuple(cols[3:6]), cols[6])


def geometry_kind(g: Geometry) -> str:
    return "2d" if isinstance(g, Box2D) else "3d"


__all__ = [
    "AnchorRef",
    "Box2D",
    "Box3D",
    "ClassDistribution",
    "Detection",
    "DetectionSet",
    "Geometry",
    "GroundTruthBox",
    "MatchConfig",
    "PseudoBox",
    "argmax_class",
    "argmax_index",
    "confidence",
    "geometry_kind",
    "mean_geometry",
    "ranking_score",
]
