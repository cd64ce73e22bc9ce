"""Pseudo-label quality metrics, VOC-style AP50 and the label ablations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Literal, Mapping, Optional, Sequence

import numpy as np

from .core import (
    DetectionSet,
    GroundTruthBox,
    MatchConfig,
    PseudoBox,
    argmax_class,
    ranking_score,
)
from .errors import ConfigError
from .matching import iou_2d, match_sets

AblationKind = Literal["none", "discard_fp", "random_fp", "gt_labels"]
ABLATIONS = ("none", "discard_fp", "random_fp", "gt_labels")
KL_FLOOR = 1e-12


@dataclass(frozen=True)
class WindowMetrics:
    """Aggregates over one window of training iterations.

    ``pseudo_precision`` is None when the window produced no pseudo boxes.
    ``correct_count`` is the mean number of correct pseudo boxes per iteration.
    """

    window_index: int
    pseudo_precision: Optional[float]
    correct_count: float
    mean_kl: float
    pseudo_total: int


def _best_gt(box, gt: Sequence[GroundTruthBox]) -> tuple[int, float]:
    best_i, best_iou = -1, 0.0
    for i, g in enumerate(gt):
        v = iou_2d(box, g.geometry)
        if v > best_iou:
            best_i, best_iou = i, v
    return best_i, best_iou


def classify_pseudo(pseudo: Sequence[PseudoBox], gt: Sequence[GroundTruthBox],
                    iou_thr: float = 0.5) -> List[bool]:
    """True (TP) when the best-overlapping GT box has IoU >= ``iou_thr`` and the same class.

    A GT box may validate several pseudo boxes.
    """
    flags = []
    for p in pseudo:
        i, v = _best_gt(p.geometry, gt)
        flags.append(i >= 0 and v >= iou_thr and gt[i].class_index == p.class_index)
    return flags


def pseudo_precision(pseudo: Sequence[PseudoBox], gt: Sequence[GroundTruthBox],
                     iou_thr: float = 0.5) -> Optional[float]:
    if not pseudo:
        return None
    flags = classify_pseudo(pseudo, gt, iou_thr)
    return sum(flags) / len(flags)


def correct_count(pseudo: Sequence[PseudoBox], gt: Sequence[GroundTruthBox],
                  iou_thr: float = 0.5) -> int:
    return sum(classify_pseudo(pseudo, gt, iou_thr))


def _voc_ap(recall: np.ndarray, precision: np.ndarray, style: str) -> float:
    if style == "voc07_11pt":
        points = []
        for t in np.linspace(0.0, 1.0, 11):
            mask = recall >= t - 1e-12
            points.append(float(precision[mask].max()) if mask.any() else 0.0)
        return math.fsum(points) / 11.0
    if style == "all_point":
        mrec = np.concatenate(([0.0], recall, [1.0]))
        mpre = np.concatenate(([0.0], precision, [0.0]))
        mpre = np.maximum.accumulate(mpre[::-1])[::-1]
        idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
        return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))
    raise ConfigError(f"unknown AP style {style!r}")


def ap50(detections: Mapping[int, DetectionSet] | Sequence[DetectionSet],
         gt: Mapping[int, Sequence[GroundTruthBox]],
         style: Literal["voc07_11pt", "all_point"] = "voc07_11pt",
         iou_thr: float = 0.5) -> float:
    """VOC-style AP at IoU 0.5, averaged over classes that have ground truth.

    Detections are ranked by score within each class over all images and
    greedily matched one-to-one to unmatched GT boxes.
    """
    if not isinstance(detections, Mapping):
        detections = {s.image_id: s for s in detections}
    classes = sorted({g.class_index for boxes in gt.values() for g in boxes})
    if not classes:
        return 0.0
    aps = []
    for c in classes:
        n_gt = sum(1 for boxes in gt.values() for g in boxes if g.class_index == c)
        cands = []
        for image_id in sorted(detections):
            for k, d in enumerate(detections[image_id].detections):
                if argmax_class(d) == c:
                    cands.append((-ranking_score(d), image_id, k, d))
        cands.sort(key=lambda e: e[:3])
        used: Dict[int, set] = {}
        tp = np.zeros(len(cands))
        for n, (_, image_id, _, d) in enumerate(cands):
            boxes = gt.get(image_id, ())
            best_i, best_iou = -1, 0.0
            for i, g in enumerate(boxes):
                if g.class_index != c:
                    continue
                v = iou_2d(d.geometry, g.geometry)
                if v > best_iou:
                    best_i, best_iou = i, v
            taken = used.setdefault(image_id, set())
            if best_iou >= iou_thr and best_i not in taken:
                tp[n] = 1.0
                taken.add(best_i)
        if len(cands) == 0:
            aps.append(0.0)
            continue
        ctp = np.cumsum(tp)
        recall = ctp / n_gt
        precision = ctp / np.arange(1, len(cands) + 1)
        aps.append(_voc_ap(recall, precision, style))
    return float(np.mean(aps))


def kl_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    p = np.maximum(np.asarray(p, dtype=float), KL_FLOOR)
    q = np.maximum(np.asarray(q, dtype=float), KL_FLOOR)
    return float(np.sum(p * np.log(p / q)))


def mean_kl(set_a: DetectionSet, set_b: DetectionSet, cfg: MatchConfig = MatchConfig()) -> float:
    """Mean KL(p_A || p_B) over non-virtual matched pairs; 0 without pairs."""
    vals = []
    for m in match_sets(set_a, set_b, cfg):
        if not m.is_virtual:
            vals.append(kl_divergence(set_a[m.query_index].dist.probs,
                                      set_b[m.matched_index].dist.probs))
    return math.fsum(vals) / len(vals) if vals else 0.0


def ablate(pseudo: Sequence[PseudoBox], gt: Sequence[GroundTruthBox], kind: str,
           rng: np.random.Generator | None, num_classes: int | None = None,
           iou_thr: float = 0.5) -> List[PseudoBox]:
    """Label ablations that use ground truth to edit pseudo labels.

    ``random_fp`` resamples each false positive's class uniformly over all
    classes; ``gt_labels`` copies the best-overlapping GT class and drops boxes
    without a GT counterpart.
    """
    if kind not in ABLATIONS:
        raise ConfigError(f"unknown ablation {kind!r}")
    if kind == "none":
        return list(pseudo)
    if kind == "random_fp" and (rng is None or num_classes is None):
        raise ConfigError("random_fp ablation needs an rng and num_classes")
    out = []
    for p in pseudo:
        i, v = _best_gt(p.geometry, gt)
        matched = i >= 0 and v >= iou_thr
        tp = matched and gt[i].class_index == p.class_index
        if kind == "discard_fp":
            if tp:
                out.append(p)
        elif kind == "random_fp":
            if tp:
                out.append(p)
            else:
                cls = int(rng.integers(num_classes))
                out.append(PseudoBox(cls, p.geometry, p.source_confidence))
        else:
            if matched:
                out.append(PseudoBox(gt[i].class_index, p.geometry, p.source_confidence))
    return out


def ablation_dropped(pseudo: Sequence[PseudoBox], gt: Sequence[GroundTruthBox], kind: str,
                     iou_thr: float = 0.5) -> List[PseudoBox]:
    """The pseudo boxes that :func:`ablate` removes (it never removes under none/random_fp)."""
    if kind == "discard_fp":
        return [p for p, tp in zip(pseudo, classify_pseudo(pseudo, gt, iou_thr)) if not tp]
    if kind == "gt_labels":
        out = []
        for p in pseudo:
            i, v = _best_gt(p.geometry, gt)
            if not (i >= 0 and v >= iou_thr):
                out.append(p)
        return out
    return []


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties."""
    from scipy.stats import spearmanr

    rho = spearmanr(x, y).statistic
    return float(rho)


def summarize(values: Sequence[float]) -> Dict[str, float | None]:
    """Mean, sample standard deviation and count; the mean of nothing is None."""
    arr = np.asarray(values, dtype=float)
    return {
        "mean": float(arr.mean()) if arr.size else None,
        "std": float(arr.std(ddof=1)) if arr.size > 1 else (0.0 if arr.size else None),
        "n": int(arr.size),
    }


__all__ = [
    "ABLATIONS",
    "WindowMetrics",
    "ablate",
    "ablation_dropped",
    "ap50",
    "classify_pseudo",
    "correct_count",
    "kl_divergence",
    "mean_kl",
    "pseudo_precision",
    "spearman",
    "summarize",
]
