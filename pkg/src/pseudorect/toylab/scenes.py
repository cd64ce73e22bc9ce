"""Synthetic grid scenes and the anchor geometry shared by the toy detectors.

A scene is a G x G grid of feature vectors. Every cell carries one anchor: a
square of side ``ANCHOR_SIZE`` centred on the cell. Feature layout per cell:

    [0]        constant 1 (bias)
    [1:5]      box-offset channels: encoded offsets of the overlapping object
               relative to the cell's anchor, times ``GEOM_SCALE``, plus noise
    [5:F]      class signature scaled by how well the anchor covers the object,
               plus noise

Objects are centred near cell centres so each object has one anchor with
IoU >= 0.5, the positive-assignment threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

from ..core import Box2D, GroundTruthBox
from ..streams import stream

ANCHOR_SIZE = 2.0
BIAS, GEOM = 0, slice(1, 5)
SIG_START = 5
SIZE_RANGE = (1.6, 2.4)
CENTER_JITTER = 0.25
# offsets are ~0.1 in size; scaling them to ~unit variance keeps plain gradient
# descent on the box head well conditioned
GEOM_SCALE = 8.0
# feature strength ramps from 0 to 1 as anchor IoU goes from STRENGTH_LO to STRENGTH_HI
STRENGTH_LO, STRENGTH_HI = 0.2, 0.6


@dataclass(frozen=True, eq=False)
class ToyScene:
    image_id: int
    grid: np.ndarray  # (G, G, F)
    gt: Tuple[GroundTruthBox, ...]

    @property
    def size(self) -> int:
        return self.grid.shape[0]

    @property
    def features(self) -> np.ndarray:
        """Anchor-major view ``(G*G, F)``; anchor id = row * G + col."""
        g, _, f = self.grid.shape
        return self.grid.reshape(g * g, f)


@dataclass(frozen=True)
class World:
    """Dataset-level constants shared by every scene drawn from one seed."""

    num_classes: int
    grid: int
    features: int
    k_max: int
    signatures: np.ndarray  # (C, F - SIG_START)
    feature_noise: float
    geometry_noise: float


@lru_cache(maxsize=16)
def anchor_boxes(grid: int) -> np.ndarray:
    """Corner boxes ``(G*G, 4)`` of the anchors, row-major."""
    rows, cols = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
    cx = cols.ravel() + 0.5
    cy = rows.ravel() + 0.5
    h = ANCHOR_SIZE / 2.0
    out = np.stack([cx - h, cy - h, cx + h, cy + h], axis=1)
    out.setflags(write=False)
    return out


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between corner boxes ``a (N,4)`` and ``b (M,4)``."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def encode(boxes: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Offsets ``(dcx, dcy, dw, dh)`` of ``boxes`` relative to ``anchors``."""
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    acx = anchors[:, 0] + 0.5 * aw
    acy = anchors[:, 1] + 0.5 * ah
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    cx = boxes[:, 0] + 0.5 * w
    cy = boxes[:, 1] + 0.5 * h
    return np.stack([(cx - acx) / aw, (cy - acy) / ah, np.log(w / aw), np.log(h / ah)], axis=1)


def decode(offsets: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    cx = anchors[:, 0] + 0.5 * aw + offsets[:, 0] * aw
    cy = anchors[:, 1] + 0.5 * ah + offsets[:, 1] * ah
    # cap the log-scale so exp never overflows
    w = aw * np.exp(np.clip(offsets[:, 2], -8.0, 8.0))
    h = ah * np.exp(np.clip(offsets[:, 3], -8.0, 8.0))
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


def flip_boxes(boxes: np.ndarray, grid: int) -> np.ndarray:
    """Mirror corner boxes about the vertical axis of a ``grid``-wide scene."""
    boxes = np.asarray(boxes, dtype=float)
    return np.stack([grid - boxes[:, 2], boxes[:, 1], grid - boxes[:, 0], boxes[:, 3]], axis=1)


def flip_grid(grid: np.ndarray) -> np.ndarray:
    """Horizontal flip of a feature grid; the x-offset channel changes sign."""
    out = grid[:, ::-1, :].copy()
    out[..., GEOM.start] *= -1.0
    return out


def flip_anchor_index(grid: int) -> np.ndarray:
    """``perm[a]`` = anchor that ``a`` lands on after a horizontal flip."""
    idx = np.arange(grid * grid)
    r, c = divmod(idx, grid)
    return r * grid + (grid - 1 - c)


def make_world(seed: int, num_classes: int, grid: int, features: int, k_max: int, *,
               pair_similarity: float = 0.6, objectness: float = 0.0, signal: float = 1.0,
               feature_noise: float = 0.35, geometry_noise: float = 0.05) -> World:
    """Draw class signatures; classes come in pairs ``(2k, 2k+1)`` sharing a base direction.

    ``pair_similarity`` is the approximate cosine similarity within a pair.
    ``objectness`` is the share of squared signal on a direction common to all
    classes, which makes foreground-vs-background easier than telling classes apart.
    """
    dims = features - SIG_START
    if dims < 2:
        raise ValueError(f"need at least {SIG_START + 2} feature channels, got {features}")
    rng = stream(seed, "world", "signatures")
    if not (0.0 <= objectness < 1.0):
        raise ValueError(f"objectness {objectness!r} outside [0, 1)")
    base = rng.standard_normal(((num_classes + 1) // 2, dims))
    own = rng.standard_normal((num_classes, dims))
    common = rng.standard_normal(dims)
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    own /= np.linalg.norm(own, axis=1, keepdims=True)
    common /= np.linalg.norm(common)
    sig = np.sqrt(pair_similarity) * base[np.arange(num_classes) // 2] \
        + np.sqrt(1.0 - pair_similarity) * own
    sig /= np.linalg.norm(sig, axis=1, keepdims=True)
    sig = np.sqrt(objectness) * common + np.sqrt(1.0 - objectness) * sig
    sig *= signal / np.linalg.norm(sig, axis=1, keepdims=True)
    return World(num_classes, grid, features, k_max, sig, feature_noise, geometry_noise)


def _place_objects(rng: np.random.Generator, world: World) -> List[Tuple[int, np.ndarray]]:
    g = world.grid
    k = int(rng.integers(1, world.k_max + 1))
    inner = np.arange(1, g - 1)
    cells = [(r, c) for r in inner for c in inner]
    picks = rng.choice(len(cells), size=min(k, len(cells)), replace=False)
    objs = []
    for p in picks:
        r, c = cells[int(p)]
        cx = c + 0.5 + rng.uniform(-CENTER_JITTER, CENTER_JITTER)
        cy = r + 0.5 + rng.uniform(-CENTER_JITTER, CENTER_JITTER)
        w, h = rng.uniform(*SIZE_RANGE, size=2)
        cls = int(rng.integers(world.num_classes))
        objs.append((cls, np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])))
    return objs


def render(world: World, objects: Sequence[Tuple[int, np.ndarray]],
           rng: np.random.Generator) -> np.ndarray:
    """Feature grid for the given ``(class, box)`` objects."""
    g, f = world.grid, world.features
    anchors = anchor_boxes(g)
    feats = np.zeros((g * g, f))
    feats[:, BIAS] = 1.0
    if objects:
        boxes = np.stack([b for _, b in objects])
        classes = np.array([c for c, _ in objects])
        iou = pairwise_iou(anchors, boxes)
        best = iou.argmax(axis=1)
        best_iou = iou[np.arange(len(anchors)), best]
        covered = best_iou > 0
        strength = np.clip((best_iou - STRENGTH_LO) / (STRENGTH_HI - STRENGTH_LO), 0.0, 1.0)
        feats[:, SIG_START:] = strength[:, None] * world.signatures[classes[best]]
        feats[covered, GEOM] = GEOM_SCALE * encode(boxes[best[covered]], anchors[covered])
    feats[:, GEOM] += GEOM_SCALE * world.geometry_noise * rng.standard_normal((g * g, 4))
    feats[:, SIG_START:] += world.feature_noise * rng.standard_normal((g * g, f - SIG_START))
    return feats.reshape(g, g, f)


def generate_scenes(seed: int, count: int, num_classes: int = 4, grid: int = 8,
                    features: int = 13, k_max: int = 4, *, world: World | None = None,
                    first_image_id: int = 0, **world_kw) -> List[ToyScene]:
    """Deterministic list of ``count`` scenes for ``seed``.

    ``world_kw`` is forwarded to :func:`make_world` when no ``world`` is given.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if world is None:
        world = make_world(seed, num_classes, grid, features, k_max, **world_kw)
    rng = stream(seed, "scenes", first_image_id)
    scenes = []
    for i in range(count):
        objs = _place_objects(rng, world)
        grid_feats = render(world, objs, rng)
        gt = tuple(GroundTruthBox(c, Box2D(*map(float, b))) for c, b in objs)
        scenes.append(ToyScene(first_image_id + i, grid_feats, gt))
    return scenes
