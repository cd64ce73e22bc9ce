"""Linear per-anchor detection head, its losses and their analytic gradients.

The head maps each cell's feature vector to ``C + 1`` logits (the last one is
background) and four box offsets. Weights are either shared by all anchors
(``(F, K)`` / ``(F, 4)``) or held per anchor (``(A, F, K)`` / ``(A, F, 4)``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ..core import AnchorRef, Box2D, ClassDistribution, Detection, DetectionSet, PseudoBox
from ..errors import ShapeMismatch
from .scenes import (
    ToyScene,
    anchor_boxes,
    decode,
    encode,
    flip_anchor_index,
    flip_grid,
    pairwise_iou,
)

ASSIGN_IOU = 0.5
NMS_IOU = 0.45
SMOOTH_L1_BETA = 1.0


@dataclass(frozen=True, eq=False)
class ToyDetectorParams:
    cls_w: np.ndarray
    box_w: np.ndarray

    def __post_init__(self):
        if self.cls_w.ndim != self.box_w.ndim or self.cls_w.shape[:-1] != self.box_w.shape[:-1]:
            raise ShapeMismatch(f"head shapes {self.cls_w.shape} and {self.box_w.shape} disagree")
        if self.box_w.shape[-1] != 4:
            raise ShapeMismatch("box head must have 4 outputs")

    @property
    def num_classes(self) -> int:
        return self.cls_w.shape[-1] - 1

    @property
    def per_cell(self) -> bool:
        return self.cls_w.ndim == 3

    def copy(self) -> "ToyDetectorParams":
        return ToyDetectorParams(self.cls_w.copy(), self.box_w.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.cls_w.ravel(), self.box_w.ravel()])

    def with_flat(self, v: np.ndarray) -> "ToyDetectorParams":
        n = self.cls_w.size
        return ToyDetectorParams(v[:n].reshape(self.cls_w.shape).copy(),
                                 v[n:].reshape(self.box_w.shape).copy())

    def axpy(self, alpha: float, other: "ToyDetectorParams") -> "ToyDetectorParams":
        """``self + alpha * other``."""
        return ToyDetectorParams(self.cls_w + alpha * other.cls_w, self.box_w + alpha * other.box_w)

    def allclose(self, other: "ToyDetectorParams") -> bool:
        return np.array_equal(self.cls_w, other.cls_w) and np.array_equal(self.box_w, other.box_w)


def zero_params(num_features: int, num_classes: int, anchors: int | None = None) -> ToyDetectorParams:
    lead = () if anchors is None else (anchors,)
    return ToyDetectorParams(np.zeros(lead + (num_features, num_classes + 1)),
                             np.zeros(lead + (num_features, 4)))


def init_params(rng: np.random.Generator, num_features: int, num_classes: int,
                scale: float = 0.5, anchors: int | None = None) -> ToyDetectorParams:
    p = zero_params(num_features, num_classes, anchors)
    return ToyDetectorParams(scale * rng.standard_normal(p.cls_w.shape),
                             scale * rng.standard_normal(p.box_w.shape))


def _head(params: ToyDetectorParams, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Logits ``(..., A, K)`` and offsets ``(..., A, 4)`` for features ``(..., A, F)``."""
    if params.per_cell:
        return (np.einsum("...af,afk->...ak", x, params.cls_w),
                np.einsum("...af,afk->...ak", x, params.box_w))
    return x @ params.cls_w, x @ params.box_w


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def nms(boxes: np.ndarray, scores: np.ndarray, iou_thr: float = NMS_IOU) -> List[int]:
    """Greedy NMS; returns kept indices in descending score order (stable on ties)."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    if not order:
        return []
    iou = pairwise_iou(boxes, boxes)
    keep: List[int] = []
    suppressed = np.zeros(len(scores), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= iou[i] > iou_thr
    return keep


def toy_forward(params: ToyDetectorParams, scene: ToyScene | np.ndarray, *,
                detector_id: int = 0, image_id: int | None = None,
                nms_iou: float = NMS_IOU) -> DetectionSet:
    """Decode per-anchor predictions into detections.

    Anchors whose argmax (over C+1, lowest index on ties) is a foreground class
    become detections carrying the renormalised foreground distribution, the
    decoded box and their anchor id. Per-class NMS follows.
    """
    if isinstance(scene, ToyScene):
        grid_feats, image_id = scene.grid, scene.image_id if image_id is None else image_id
    else:
        grid_feats, image_id = scene, 0 if image_id is None else image_id
    g = grid_feats.shape[0]
    x = grid_feats.reshape(g * g, -1)
    logits, offsets = _head(params, x)
    probs = softmax(logits)
    c = params.num_classes
    label = probs.argmax(axis=1)
    fg = np.nonzero(label < c)[0]
    if fg.size == 0:
        return DetectionSet(image_id, ())
    anchors = anchor_boxes(g)
    boxes = decode(offsets[fg], anchors[fg])
    fg_probs = probs[fg, :c]
    fg_probs = fg_probs / fg_probs.sum(axis=1, keepdims=True)
    conf = fg_probs.max(axis=1)
    cls = label[fg]
    kept: List[int] = []
    for k in np.unique(cls):
        idx = np.nonzero(cls == k)[0]
        kept.extend(idx[j] for j in nms(boxes[idx], conf[idx], nms_iou))
    kept.sort(key=lambda i: (-conf[i], fg[i]))
    dets = []
    for i in kept:
        b = boxes[i]
        dets.append(Detection(
            Box2D(float(b[0]), float(b[1]), float(b[2]), float(b[3])),
            ClassDistribution(tuple(fg_probs[i].tolist())),
            AnchorRef(int(fg[i])),
            detector_id,
            image_id,
        ))
    return DetectionSet(image_id, tuple(dets))


@dataclass(frozen=True, eq=False)
class Targets:
    """Per-anchor training targets for one scene (or a stacked batch)."""

    labels: np.ndarray    # (..., A) int, C = background
    offsets: np.ndarray   # (..., A, 4)
    positive: np.ndarray  # (..., A) bool
    valid: np.ndarray | None = None  # (..., A) bool; False drops the anchor from l_cls


def assign_targets(grid: int, classes: Sequence[int], boxes: np.ndarray, num_classes: int,
                   iou_thr: float = ASSIGN_IOU) -> Targets:
    """Anchor is positive for the best-overlapping box when IoU >= ``iou_thr``."""
    anchors = anchor_boxes(grid)
    a = len(anchors)
    labels = np.full(a, num_classes, dtype=np.int64)
    offsets = np.zeros((a, 4))
    if len(classes) == 0:
        return Targets(labels, offsets, np.zeros(a, dtype=bool))
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    iou = pairwise_iou(anchors, boxes)
    best = iou.argmax(axis=1)
    pos = iou[np.arange(a), best] >= iou_thr
    labels[pos] = np.asarray(classes)[best[pos]]
    offsets[pos] = encode(boxes[best[pos]], anchors[pos])
    return Targets(labels, offsets, pos)


def targets_from_gt(scene: ToyScene, num_classes: int) -> Targets:
    classes = [g.class_index for g in scene.gt]
    boxes = np.array([g.geometry.as_tuple() for g in scene.gt]).reshape(-1, 4)
    return assign_targets(scene.size, classes, boxes, num_classes)


def targets_from_pseudo(grid: int, pseudo: Sequence[PseudoBox], num_classes: int) -> Targets:
    classes = [p.class_index for p in pseudo]
    boxes = np.array([p.geometry.as_tuple() for p in pseudo]).reshape(-1, 4)
    return assign_targets(grid, classes, boxes, num_classes)


def stack_targets(ts: Sequence[Targets]) -> Targets:
    valid = None
    if any(t.valid is not None for t in ts):
        valid = np.stack([np.ones_like(t.positive) if t.valid is None else t.valid for t in ts])
    return Targets(np.stack([t.labels for t in ts]), np.stack([t.offsets for t in ts]),
                   np.stack([t.positive for t in ts]), valid)


def ignore_regions(t: Targets, grid: int, boxes: Sequence[PseudoBox]) -> Targets:
    """Drop non-positive anchors overlapping ``boxes`` at IoU >= 0.5 from the classification term."""
    if not boxes:
        return t
    arr = np.array([b.geometry.as_tuple() for b in boxes]).reshape(-1, 4)
    hit = pairwise_iou(anchor_boxes(grid), arr).max(axis=1) >= ASSIGN_IOU
    valid = np.ones_like(t.positive) if t.valid is None else t.valid.copy()
    valid &= ~(hit & ~t.positive)
    return Targets(t.labels, t.offsets, t.positive, valid)


def detection_loss(params: ToyDetectorParams, x: np.ndarray,
                   t: Targets) -> Tuple[float, ToyDetectorParams]:
    """Mean cross-entropy over all anchors plus mean smooth-L1 over positives.

    ``x`` is ``(B, A, F)``; the regression term sums the four coordinates and
    averages over all positive anchors in the batch. Returns the loss and its
    exact gradient.
    """
    if x.ndim == 2:
        x = x[None]
        t = Targets(t.labels[None], t.offsets[None], t.positive[None],
                    None if t.valid is None else t.valid[None])
    b, a, _ = x.shape
    logits, pred = _head(params, x)
    logp = log_softmax(logits)
    n = b * a
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, t.labels[..., None], 1.0, axis=-1)
    if t.valid is None:
        n_cls = n
        l_cls = -float(np.sum(logp * onehot)) / n_cls
        d_logits = (np.exp(logp) - onehot) / n_cls
    else:
        w = t.valid[..., None].astype(float)
        n_cls = max(int(t.valid.sum()), 1)
        l_cls = -float(np.sum(w * logp * onehot)) / n_cls
        d_logits = w * (np.exp(logp) - onehot) / n_cls

    m = int(t.positive.sum())
    d_pred = np.zeros_like(pred)
    l_reg = 0.0
    if m:
        r = np.where(t.positive[..., None], pred - t.offsets, 0.0)
        ar = np.abs(r)
        quad = ar < SMOOTH_L1_BETA
        l_reg = float(np.sum(np.where(quad, 0.5 * r * r / SMOOTH_L1_BETA,
                                      ar - 0.5 * SMOOTH_L1_BETA))) / m
        d_pred = np.where(quad, r / SMOOTH_L1_BETA, np.sign(r)) / m

    if params.per_cell:
        g_cls = np.einsum("baf,bak->afk", x, d_logits)
        g_box = np.einsum("baf,bak->afk", x, d_pred)
    else:
        xf = x.reshape(n, -1)
        g_cls = xf.T @ d_logits.reshape(n, -1)
        g_box = xf.T @ d_pred.reshape(n, -1)
    return l_cls + l_reg, ToyDetectorParams(g_cls, g_box)


def supervised_loss(params: ToyDetectorParams, scene: ToyScene | Sequence[ToyScene]):
    scenes = [scene] if isinstance(scene, ToyScene) else list(scene)
    c = params.num_classes
    x = np.stack([s.features for s in scenes])
    return detection_loss(params, x, stack_targets([targets_from_gt(s, c) for s in scenes]))


def unsupervised_loss(params: ToyDetectorParams, scene_features: np.ndarray,
                      pseudo: Sequence[PseudoBox]):
    """Same structure as the supervised loss with pseudo boxes as targets.

    No pseudo boxes means no unsupervised signal: loss 0 and a zero gradient.
    """
    if len(pseudo) == 0:
        return 0.0, ToyDetectorParams(np.zeros_like(params.cls_w), np.zeros_like(params.box_w))
    g = scene_features.shape[0]
    t = targets_from_pseudo(g, pseudo, params.num_classes)
    return detection_loss(params, scene_features.reshape(g * g, -1), t)


def consistency_targets(teacher: ToyDetectorParams, weak: np.ndarray, flip: bool) -> Targets:
    """Hard class labels (incl. background) and offsets predicted on the weak view,
    mapped onto the anchors of the strong view."""
    g = weak.shape[0]
    logits, offsets = _head(teacher, weak.reshape(g * g, -1))
    labels = logits.argmax(axis=1)
    offsets = offsets.copy()
    if flip:
        perm = flip_anchor_index(g)
        moved_labels = np.empty_like(labels)
        moved_offsets = np.empty_like(offsets)
        moved_labels[perm] = labels
        moved_offsets[perm] = offsets
        moved_offsets[:, 0] *= -1.0
        labels, offsets = moved_labels, moved_offsets
    return Targets(labels, offsets, labels < teacher.num_classes)


def strong_view(grid_feats: np.ndarray, rng: np.random.Generator | None, noise_scale: float,
                flip: bool) -> np.ndarray:
    out = grid_feats.copy()
    if noise_scale > 0 and rng is not None:
        out[..., 1:] += noise_scale * rng.standard_normal(out[..., 1:].shape)
    return flip_grid(out) if flip else out


def consistency_loss(params: ToyDetectorParams, scene_features: np.ndarray,
                     rng: np.random.Generator | None = None, *, noise_scale: float = 0.1,
                     flip: bool = True, teacher: ToyDetectorParams | None = None):
    """Weak-view predictions supervise the strong (noised, flipped) view.

    Targets come from ``teacher`` (default: ``params``) and are held fixed, so
    the returned gradient is with respect to the strong-view branch only.
    """
    teacher = params if teacher is None else teacher
    strong = strong_view(scene_features, rng, noise_scale, flip)
    t = consistency_targets(teacher, scene_features, flip)
    g = scene_features.shape[0]
    return detection_loss(params, strong.reshape(g * g, -1), t)


def flipped_pseudo(pseudo: Sequence[PseudoBox], grid: int) -> List[PseudoBox]:
    """Mirror pseudo boxes for a horizontally flipped view."""
    out = []
    for p in pseudo:
        b = p.geometry
        out.append(PseudoBox(p.class_index, Box2D(grid - b.x_max, b.y_min, grid - b.x_min, b.y_max),
                             p.source_confidence))
    return out
