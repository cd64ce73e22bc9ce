"""Stochastic oracle detectors with a controllable error model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from ..core import AnchorRef, Box2D, ClassDistribution, Detection, DetectionSet
from ..errors import ValidationError
from .scenes import ANCHOR_SIZE, ToyScene


@dataclass(frozen=True)
class ConfidenceLaw:
    """Beta laws for the drawn confidence, mapped onto ``(1/C, 1)``.

    Correct emissions use ``Beta(*correct)``, wrong ones ``Beta(*wrong)``.
    Keeping the confidence above ``1/C`` guarantees the emitted class stays
    the argmax once the remaining mass is spread uniformly.
    """

    correct: Tuple[float, float] = (5.0, 2.0)
    wrong: Tuple[float, float] = (2.0, 3.0)

    def draw(self, rng: np.random.Generator, is_correct: bool, num_classes: int) -> float:
        a, b = self.correct if is_correct else self.wrong
        u = rng.beta(a, b)
        lo = 1.0 / num_classes
        # keep strictly inside (1/C, 1] so the drawn class is the unique argmax
        u = min(max(u, 1e-9), 1.0)
        return lo + (1.0 - lo) * u

    def minimum(self, num_classes: int) -> float:
        return 1.0 / num_classes


@dataclass(frozen=True, eq=False)
class NoiseModel:
    confusion: np.ndarray
    confidence_law: ConfidenceLaw = field(default_factory=ConfidenceLaw)
    localization_jitter: float = 0.0
    miss_rate: float = 0.0
    spurious_rate: float = 0.0

    def __post_init__(self):
        conf = np.asarray(self.confusion, dtype=float)
        object.__setattr__(self, "confusion", conf)
        if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
            raise ValidationError("confusion matrix must be square")
        if np.any(conf < 0) or not np.allclose(conf.sum(axis=1), 1.0, atol=1e-9):
            raise ValidationError("confusion rows must be non-negative and sum to 1")
        for name in ("miss_rate", "spurious_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} {v!r} outside [0, 1]")
        if self.localization_jitter < 0:
            raise ValidationError("localization_jitter must be >= 0")

    @property
    def num_classes(self) -> int:
        return self.confusion.shape[0]

    @classmethod
    def identity(cls, num_classes: int, **kw) -> "NoiseModel":
        return cls(np.eye(num_classes), **kw)

    @classmethod
    def with_flips(cls, num_classes: int, flips: dict, **kw) -> "NoiseModel":
        """Identity confusion except ``flips[i] = (j, p)``: class i emitted as j with prob p."""
        m = np.eye(num_classes)
        for i, (j, p) in flips.items():
            m[i, i] -= p
            m[i, j] += p
        return cls(m, **kw)


def _jitter(rng: np.random.Generator, box: Box2D, sd: float) -> Box2D:
    if sd == 0:
        return box
    x0, y0, x1, y1 = box.as_tuple()
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    w, h = x1 - x0, y1 - y0
    cx += sd * rng.standard_normal()
    cy += sd * rng.standard_normal()
    w *= float(np.exp(sd * rng.standard_normal() / 2.0))
    h *= float(np.exp(sd * rng.standard_normal() / 2.0))
    return Box2D(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _anchor_of(box: Box2D, grid: int) -> AnchorRef:
    cx, cy = box.center
    c = min(max(int(np.floor(cx)), 0), grid - 1)
    r = min(max(int(np.floor(cy)), 0), grid - 1)
    return AnchorRef(r * grid + c)


def oracle_predict(scene: ToyScene, noise: NoiseModel, rng: np.random.Generator,
                   detector_id: int = 0) -> DetectionSet:
    """Simulated detector output for one scene.

    Each object is missed with ``miss_rate``; otherwise its class is drawn from
    the confusion row, its box jittered and its confidence drawn from the
    confidence law given whether the class came out right. Each empty cell
    then emits a spurious detection with ``spurious_rate``.
    """
    c = noise.num_classes
    g = scene.size
    dets = []
    occupied = set()
    for gt in scene.gt:
        occupied.add(_anchor_of(gt.geometry, g).anchor_id)
        if rng.random() < noise.miss_rate:
            continue
        cls = int(rng.choice(c, p=noise.confusion[gt.class_index]))
        conf = noise.confidence_law.draw(rng, cls == gt.class_index, c)
        box = _jitter(rng, gt.geometry, noise.localization_jitter)
        dets.append(Detection(box, ClassDistribution.peaked(c, cls, conf),
                              _anchor_of(box, g), detector_id, scene.image_id))
    if noise.spurious_rate > 0:
        half = ANCHOR_SIZE / 2.0
        for a in range(g * g):
            if a in occupied or rng.random() >= noise.spurious_rate:
                continue
            r, col = divmod(a, g)
            base = Box2D(col + 0.5 - half, r + 0.5 - half, col + 0.5 + half, r + 0.5 + half)
            cls = int(rng.integers(c))
            conf = noise.confidence_law.draw(rng, False, c)
            box = _jitter(rng, base, noise.localization_jitter)
            dets.append(Detection(box, ClassDistribution.peaked(c, cls, conf),
                                  AnchorRef(a), detector_id, scene.image_id))
    return DetectionSet(scene.image_id, tuple(dets))
