"""Semi-supervised training loop for the toy detectors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core import MatchConfig, PseudoBox
from ..errors import ConfigError, ShapeMismatch
from ..fusion import FusionConfig, wbf_fuse
from ..metrics import (
    ABLATIONS,
    WindowMetrics,
    ablate,
    ablation_dropped,
    ap50,
    classify_pseudo,
    mean_kl,
)
from ..rectify import STRATEGIES, pseudo_labels, self_label
from ..streams import stream
from .detector import (
    Targets,
    ToyDetectorParams,
    consistency_targets,
    detection_loss,
    init_params,
    ignore_regions,
    stack_targets,
    strong_view,
    targets_from_gt,
    targets_from_pseudo,
    toy_forward,
)
from .oracle import NoiseModel, oracle_predict
from .scenes import ToyScene

log = logging.getLogger(__name__)

MODES = ("supervised", "consistency", "online_teacher", "offline_teacher") + STRATEGIES
SINGLE_DETECTOR_MODES = ("online_teacher", "offline_teacher")


@dataclass(frozen=True)
class TauSchedule:
    kind: str = "fixed"  # "fixed" | "linear"
    start: float = 0.5
    end: float = 0.5


@dataclass(frozen=True)
class OracleSeeding:
    """Pre-fit each detector's head on oracle-annotated scenes before training.

    ``noise[d]`` is the error model of the oracle annotating detector d's
    seeding pool, so detectors start with different systematic confusions.
    """

    noise: Tuple[NoiseModel, ...]
    scenes: int = 200
    steps: int = 150
    batch: int = 8
    learning_rate: float = 0.1


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "self_label"
    num_classes: int = 8
    tau: float = 0.5
    delta: float = 0.5
    metric_kind: str = "iou2d"
    # the published weight is 2.0; the toy self-labels into collapse there
    lambda_max: float = 1.5
    ramp_fraction: float = 0.1
    iterations: int = 1200
    warmup_iterations: int = 400
    batch_labeled: int = 8
    batch_unlabeled: int = 8
    learning_rate: float = 0.1
    # step-size multiplier for the classification head: its cross-entropy is
    # averaged over all anchors, so foreground directions see ~1/20 of the
    # curvature the box head sees
    cls_lr_scale: float = 40.0
    ema_decay: float = 0.99
    seed: int = 0
    tau_schedule: TauSchedule = field(default_factory=TauSchedule)
    detectors: int = 1
    ablation: str = "none"
    # anchors under pseudo boxes an ablation removed are left out of the
    # classification term instead of being taught as background
    discard_as_ignore: bool = True
    # anchors under teacher detections that did not become pseudo boxes (e.g.
    # below tau) are left out of the classification term instead of being
    # taught as background
    ignore_unlabeled_detections: bool = False
    init_scale: float = 0.05
    per_cell: bool = False
    window: int = 50
    consistency_noise: float = 0.1
    consistency_flip: bool = True
    ap_style: str = "voc07_11pt"
    fusion: FusionConfig = field(default_factory=FusionConfig)
    oracle_seeding: Optional[OracleSeeding] = None

    def __post_init__(self):
        if not (0.0 <= self.tau < 1.0):
            raise ConfigError(f"tau {self.tau!r} outside [0, 1)")
        if self.warmup_iterations > self.iterations:
            raise ConfigError("warmup_iterations exceeds iterations")
        if not (0.0 <= self.ramp_fraction <= 0.5):
            raise ConfigError("ramp_fraction outside [0, 0.5]")
        if not (0.0 <= self.ema_decay <= 1.0):
            raise ConfigError("ema_decay outside [0, 1]")
        if self.tau_schedule.kind not in ("fixed", "linear"):
            raise ConfigError(f"unknown tau schedule {self.tau_schedule.kind!r}")

    def match_config(self) -> MatchConfig:
        return MatchConfig(metric_kind=self.metric_kind, delta=self.delta)


def validate_mode(cfg: TrainConfig) -> None:
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    if cfg.ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {cfg.ablation!r}")
    if cfg.detectors < 1:
        raise ConfigError("need at least one detector")
    if cfg.mode in ("cross_rectify", "co_rectify", "cps", "intersection", "difference") \
            and cfg.detectors != 2:
        raise ConfigError(f"mode {cfg.mode!r} needs exactly 2 detectors, got {cfg.detectors}")
    if cfg.mode == "majority" and cfg.detectors < 2:
        raise ConfigError("majority mode needs at least 2 detectors")
    if cfg.mode in SINGLE_DETECTOR_MODES and cfg.detectors != 1:
        raise ConfigError(f"mode {cfg.mode!r} trains a single student")
    if cfg.mode == "consistency" and cfg.ablation != "none":
        raise ConfigError("label ablations do not apply to consistency training")
    if cfg.oracle_seeding is not None and len(cfg.oracle_seeding.noise) != cfg.detectors:
        raise ConfigError("oracle seeding needs one noise model per detector")


def lambda_schedule(cfg: TrainConfig, iteration: int) -> float:
    """Unsupervised weight: 0 in warm-up, linear ramp up, plateau, linear ramp down to 0."""
    w, last = cfg.warmup_iterations, cfg.iterations - 1
    if iteration < w:
        return 0.0
    ramp = cfg.ramp_fraction * (last - w)
    if ramp <= 0:
        return cfg.lambda_max
    frac = min(1.0, (iteration - w) / ramp, (last - iteration) / ramp)
    return cfg.lambda_max * max(0.0, frac)


def tau_at(cfg: TrainConfig, iteration: int) -> float:
    s = cfg.tau_schedule
    if s.kind == "fixed":
        return cfg.tau
    w, last = cfg.warmup_iterations, cfg.iterations - 1
    if last <= w:
        return s.start
    frac = min(1.0, max(0.0, (iteration - w) / (last - w)))
    return s.start + (s.end - s.start) * frac


@dataclass(frozen=True, eq=False)
class EmaState:
    decay: float
    params: ToyDetectorParams


def ema_update(state: EmaState, student: ToyDetectorParams) -> EmaState:
    p = state.params
    if p.cls_w.shape != student.cls_w.shape or p.box_w.shape != student.box_w.shape:
        raise ShapeMismatch("EMA and student parameter shapes differ")
    d = state.decay
    return EmaState(d, ToyDetectorParams(d * p.cls_w + (1.0 - d) * student.cls_w,
                                         d * p.box_w + (1.0 - d) * student.box_w))


@dataclass(eq=False)
class TrainedResult:
    config: TrainConfig
    params: List[ToyDetectorParams]
    ema: List[ToyDetectorParams]
    windows: List[WindowMetrics]
    ap50: List[float]
    ap50_wbf: Optional[float]

    @property
    def mean_ap50(self) -> float:
        return float(np.mean(self.ap50))


class _Window:
    def __init__(self):
        self.tp = 0
        self.total = 0
        self.kl: List[float] = []
        self.iters = 0

    def close(self, index: int, detectors: int) -> WindowMetrics:
        prec = self.tp / self.total if self.total else None
        kl = float(np.mean(self.kl)) if self.kl else 0.0
        per_iter = self.tp / (self.iters * detectors) if self.iters else 0.0
        return WindowMetrics(index, prec, per_iter, kl, self.total)


def _stack(scenes: Sequence[ToyScene]) -> np.ndarray:
    return np.stack([s.features for s in scenes])


def _seed_heads(cfg: TrainConfig, params: List[ToyDetectorParams],
                pool: Sequence[ToyScene]) -> List[ToyDetectorParams]:
    seeding = cfg.oracle_seeding
    out = []
    x = _stack(pool)
    for d, p in enumerate(params):
        rng = stream(cfg.seed, "oracle_seeding", d)
        ts = []
        for s in pool:
            dets = oracle_predict(s, seeding.noise[d], rng, detector_id=d)
            ts.append(targets_from_pseudo(s.size, self_label(dets, 0.0), cfg.num_classes))
        t_all = stack_targets(ts)
        brng = stream(cfg.seed, "oracle_seeding", "batches", d)
        for _ in range(seeding.steps):
            idx = brng.choice(len(pool), size=min(seeding.batch, len(pool)), replace=False)
            _, g = detection_loss(p, x[idx], _take(t_all, idx))
            p = _step(p, g, seeding.learning_rate, cfg.cls_lr_scale)
        out.append(p)
    return out


def _step(p: ToyDetectorParams, g: ToyDetectorParams, lr: float, cls_scale: float) -> ToyDetectorParams:
    return ToyDetectorParams(p.cls_w - (lr * cls_scale) * g.cls_w, p.box_w - lr * g.box_w)


def _take(t: Targets, idx) -> Targets:
    return Targets(t.labels[idx], t.offsets[idx], t.positive[idx],
                   None if t.valid is None else t.valid[idx])


def _sample(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    return rng.choice(n, size=min(k, n), replace=False)


def evaluate(params: Sequence[ToyDetectorParams], test: Sequence[ToyScene],
             style: str = "voc07_11pt", fusion: FusionConfig | None = None):
    """Per-detector AP50 and, with several detectors, AP50 of their fused output."""
    gt = {s.image_id: list(s.gt) for s in test}
    per_det = []
    outputs = []
    for d, p in enumerate(params):
        sets = {s.image_id: toy_forward(p, s, detector_id=d) for s in test}
        outputs.append(sets)
        per_det.append(ap50(sets, gt, style))
    fused_ap = None
    if len(params) > 1:
        fusion = fusion or FusionConfig()
        fused = {i: wbf_fuse([o[i] for o in outputs], fusion) for i in gt}
        fused_ap = ap50(fused, gt, style)
    return per_det, fused_ap


def train_run(cfg: TrainConfig, labeled: Sequence[ToyScene], unlabeled: Sequence[ToyScene],
              test: Sequence[ToyScene], seeding_pool: Sequence[ToyScene] = ()) -> TrainedResult:
    """Train ``cfg.detectors`` toy detectors under ``cfg.mode``.

    All randomness comes from named sub-streams of ``cfg.seed``; the result is
    a pure function of the config and the datasets.
    """
    validate_mode(cfg)
    if not labeled:
        raise ConfigError("need at least one labeled scene")
    c = cfg.num_classes
    f = labeled[0].features.shape[1]
    n_anchor = labeled[0].features.shape[0]
    n_det = cfg.detectors
    mcfg = cfg.match_config()

    params = [init_params(stream(cfg.seed, "init", "head", d), f, c, cfg.init_scale,
                          n_anchor if cfg.per_cell else None) for d in range(n_det)]
    if cfg.oracle_seeding is not None:
        if not seeding_pool:
            raise ConfigError("oracle seeding needs a seeding pool")
        params = _seed_heads(cfg, params, seeding_pool)
    ema = [EmaState(cfg.ema_decay, p.copy()) for p in params]

    xl = _stack(labeled)
    tl = stack_targets([targets_from_gt(s, c) for s in labeled])
    xu = _stack(unlabeled) if unlabeled else None

    rng_l = stream(cfg.seed, "batches", "labeled")
    rng_u = stream(cfg.seed, "batches", "unlabeled")
    rng_ablate = stream(cfg.seed, "ablation")
    rng_aug = stream(cfg.seed, "augment")

    use_unlabeled = cfg.mode != "supervised" and bool(unlabeled)
    offline_cache: Dict[int, List[PseudoBox]] | None = None
    windows: List[WindowMetrics] = []
    win = _Window()

    for it in range(cfg.iterations):
        li = _sample(rng_l, len(labeled), cfg.batch_labeled)
        grads = []
        for d in range(n_det):
            _, g = detection_loss(params[d], xl[li], _take(tl, li))
            grads.append(g)

        post_warmup = it >= cfg.warmup_iterations
        if use_unlabeled and post_warmup:
            lam = lambda_schedule(cfg, it)
            tau = tau_at(cfg, it)
            ui = _sample(rng_u, len(unlabeled), cfg.batch_unlabeled)
            batch = [unlabeled[i] for i in ui]
            if cfg.mode == "consistency":
                for d in range(n_det):
                    g_u = _consistency_grad(cfg, params[d], ema[d].params, xl[li], xu[ui], rng_aug)
                    grads[d] = grads[d].axpy(lam, g_u)
            else:
                if cfg.mode == "offline_teacher" and offline_cache is None:
                    teacher = ema[0].params.copy()
                    # frozen teacher: labels and raw detections computed once
                    offline_cache = {}
                    for s in unlabeled:
                        dets = toy_forward(teacher, s)
                        offline_cache[s.image_id] = (self_label(dets, tau), dets)
                if cfg.mode == "offline_teacher":
                    preds = [[offline_cache[s.image_id][1] for s in batch]]
                else:
                    preds = [[toy_forward(ema[d].params, s, detector_id=d) for s in batch]
                             for d in range(n_det)]
                for d in range(n_det):
                    pseudo_batch, dropped_batch = [], []
                    for k, s in enumerate(batch):
                        if cfg.mode == "offline_teacher":
                            pseudo = offline_cache[s.image_id][0]
                        elif cfg.mode == "online_teacher":
                            pseudo = self_label(preds[0][k], tau)
                        else:
                            pseudo = pseudo_labels(cfg.mode, [p[k] for p in preds], d, tau, mcfg)
                        flags = classify_pseudo(pseudo, s.gt)
                        win.tp += sum(flags)
                        win.total += len(flags)
                        dropped = ablation_dropped(pseudo, s.gt, cfg.ablation) \
                            if cfg.discard_as_ignore else []
                        if cfg.ignore_unlabeled_detections:
                            dropped = dropped + [det for p in preds for det in p[k]]
                        pseudo = ablate(pseudo, s.gt, cfg.ablation, rng_ablate, c)
                        pseudo_batch.append(pseudo)
                        dropped_batch.append(dropped)
                    g_u = _pseudo_grad(params[d], xu[ui], pseudo_batch, c, dropped_batch)
                    if g_u is not None:
                        grads[d] = grads[d].axpy(lam, g_u)
                win.kl.append(_window_kl(cfg, params, batch, preds, mcfg))
            win.iters += 1

        for d in range(n_det):
            params[d] = _step(params[d], grads[d], cfg.learning_rate, cfg.cls_lr_scale)
            ema[d] = ema_update(ema[d], params[d])

        if (it + 1) % cfg.window == 0 or it == cfg.iterations - 1:
            windows.append(win.close(len(windows), n_det))
            win = _Window()

    ema_params = [e.params for e in ema]
    aps, wbf_ap = evaluate(ema_params, test, cfg.ap_style, cfg.fusion) if test else ([], None)
    return TrainedResult(cfg, params, ema_params, windows, aps, wbf_ap)


def _pseudo_grad(params: ToyDetectorParams, x: np.ndarray, pseudo_batch: Sequence[List[PseudoBox]],
                 num_classes: int, dropped_batch: Sequence[List[PseudoBox]] | None = None
                 ) -> ToyDetectorParams | None:
    keep = [k for k, p in enumerate(pseudo_batch) if p]
    if not keep:
        return None
    g = x.shape[1]
    side = int(round(np.sqrt(g)))
    ts = []
    for k in keep:
        t = targets_from_pseudo(side, pseudo_batch[k], num_classes)
        if dropped_batch is not None:
            t = ignore_regions(t, side, dropped_batch[k])
        ts.append(t)
    t = stack_targets(ts)
    _, grad = detection_loss(params, x[keep], t)
    return grad


def _consistency_grad(cfg: TrainConfig, params: ToyDetectorParams, teacher: ToyDetectorParams,
                      xl: np.ndarray, xu: np.ndarray, rng: np.random.Generator) -> ToyDetectorParams:
    """Gradient of the weak/strong consistency term on labeled plus unlabeled scenes."""
    total = None
    for x in (xl, xu):
        side = int(round(np.sqrt(x.shape[1])))
        strong, targets = [], []
        for feats in x:
            grid = feats.reshape(side, side, -1)
            strong.append(strong_view(grid, rng, cfg.consistency_noise, cfg.consistency_flip)
                          .reshape(side * side, -1))
            targets.append(consistency_targets(teacher, grid, cfg.consistency_flip))
        _, g = detection_loss(params, np.stack(strong), stack_targets(targets))
        total = g if total is None else total.axpy(1.0, g)
    return total


def _window_kl(cfg: TrainConfig, params, batch, preds, mcfg) -> float:
    """Mean KL between the two detectors' EMA predictions, or between the
    teacher (EMA, or the frozen offline teacher) and the raw student."""
    vals = []
    for k, s in enumerate(batch):
        if cfg.detectors >= 2:
            a, b = preds[0][k], preds[1][k]
        else:
            a = preds[0][k]
            b = toy_forward(params[0], s, detector_id=0)
        vals.append(mean_kl(a, b, mcfg))
    return float(np.mean(vals)) if vals else 0.0

