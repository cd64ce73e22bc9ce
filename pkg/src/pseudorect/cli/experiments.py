"""Grid runners behind the subcommands."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Callable, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .. import __version__
from ..core import DetectionSet, GroundTruthBox, MatchConfig
from ..errors import ConfigError
from ..fusion import FusionConfig, wbf_fuse
from ..metrics import ap50, classify_pseudo, mean_kl, summarize
from ..rectify import STRATEGIES, pseudo_labels
from ..streams import stream
from ..toylab.oracle import oracle_predict
from ..toylab.scenes import ToyScene, generate_scenes, make_world
from ..toylab.training import train_run
from .config import DatasetConfig, ExperimentConfig, config_echo, non_paper_defaults, to_plain
from .dumps import check_compatible
from .report import ExperimentReport

log = logging.getLogger(__name__)

# image-id offsets keep the splits of one seed disjoint
SPLIT_OFFSETS = {"labeled": 0, "unlabeled": 100_000, "test": 200_000, "seeding": 300_000}


@dataclass(frozen=True, eq=False)
class Splits:
    labeled: List[ToyScene]
    unlabeled: List[ToyScene]
    test: List[ToyScene]
    seeding: List[ToyScene]


@lru_cache(maxsize=4)
def make_splits(dcfg: DatasetConfig, seed: int) -> Splits:
    world = make_world(seed, dcfg.num_classes, dcfg.grid, dcfg.features, dcfg.k_max,
                       pair_similarity=dcfg.pair_similarity, objectness=dcfg.objectness,
                       signal=dcfg.signal, feature_noise=dcfg.feature_noise,
                       geometry_noise=dcfg.geometry_noise)

    def split(name: str, count: int) -> List[ToyScene]:
        if count <= 0:
            return []
        return generate_scenes(seed, count, world=world, first_image_id=SPLIT_OFFSETS[name])

    return Splits(split("labeled", dcfg.labeled), split("unlabeled", dcfg.unlabeled),
                  split("test", dcfg.test), split("seeding", dcfg.seeding))


def _pool_map(fn: Callable, jobs: Sequence, workers: int) -> List:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _opt(x: float | None) -> float | None:
    return None if x is None else float(x)


# ---------------------------------------------------------------- training


def _train_job(job: Tuple[ExperimentConfig, str, float | None, str, int]) -> Dict[str, Any]:
    cfg, mode, tau, ablation, seed = job
    tcfg = cfg.train_config(mode, seed, tau, ablation)
    splits = make_splits(cfg.dataset, seed)
    res = train_run(tcfg, splits.labeled, splits.unlabeled, splits.test, splits.seeding)
    key = {"mode": mode, "tau": tcfg.tau, "ablation": ablation, "seed": seed}
    windows = [dict(key, window=w.window_index, pseudo_precision=_opt(w.pseudo_precision),
                    correct_count=w.correct_count, mean_kl=w.mean_kl, pseudo_total=w.pseudo_total)
               for w in res.windows]
    row = dict(key, detectors=tcfg.detectors, ap50=res.mean_ap50,
               ap50_per_detector=[float(a) for a in res.ap50], ap50_wbf=_opt(res.ap50_wbf))
    return {"row": row, "windows": windows}


def run_experiment(cfg: ExperimentConfig, command: str = "train",
                   taus: Sequence[float] | None = None) -> ExperimentReport:
    """Toy training over (strategy, tau, ablation, seed); ``taus=None`` uses ``train.tau``."""
    tau_grid: Sequence[float | None] = [None] if taus is None else list(taus)
    jobs = [(cfg, mode, tau, abl, seed)
            for mode in cfg.strategies for tau in tau_grid
            for abl in cfg.ablations for seed in cfg.seed_list()]
    for _, mode, _, abl, _ in jobs:
        # fail fast on bad combinations before spending time on any run
        cfg.train_config(mode, cfg.seed, None, abl)
    results = _pool_map(_train_job, jobs, cfg.workers)
    runs = [r["row"] for r in results]
    windows = [w for r in results for w in r["windows"]]
    summary = _summarize(runs, ("mode", "tau", "ablation"), ("ap50", "ap50_wbf"))
    return ExperimentReport(command, config_echo(cfg), non_paper_defaults(cfg), runs, windows, summary,
                            {"version": __version__})


# ---------------------------------------------------------------- oracle simulation


def _simulate_job(job: Tuple[ExperimentConfig, int]) -> List[Dict[str, Any]]:
    cfg, seed = job
    scenes = make_splits(cfg.dataset, seed).unlabeled
    models = cfg.noise_models()
    preds: List[List[DetectionSet]] = []
    for d, model in enumerate(models):
        rng = stream(seed, "oracle", d)
        preds.append([oracle_predict(s, model, rng, detector_id=d) for s in scenes])
    rows = []
    for strategy in cfg.strategies:
        for tau in cfg.taus:
            row = _pseudo_quality(strategy, tau, preds, [s.gt for s in scenes], cfg.match)
            rows.append({"strategy": strategy, "tau": tau, "seed": seed, **row})
    return rows


def _pseudo_quality(strategy: str, tau: float, preds: Sequence[Sequence[DetectionSet]],
                    gts: Sequence[Sequence[GroundTruthBox]], mcfg: MatchConfig,
                    with_kl: bool = True) -> Dict[str, Any]:
    n_det = len(preds)
    if strategy in ("cross_rectify", "co_rectify", "cps", "intersection", "difference") and n_det != 2:
        raise ConfigError(f"{strategy!r} needs exactly 2 detectors, have {n_det}")
    tp = total = 0
    kls = []
    for k, gt in enumerate(gts):
        sets = [p[k] for p in preds]
        for d in range(n_det):
            pseudo = pseudo_labels(strategy, sets, d, tau, mcfg)
            flags = classify_pseudo(pseudo, gt)
            tp += sum(flags)
            total += len(flags)
        if with_kl and n_det >= 2:
            kls.append(mean_kl(sets[0], sets[1], mcfg))
    images = max(len(gts), 1)
    return {"pseudo_precision": tp / total if total else None,
            "correct_count": tp / (images * n_det),
            "pseudo_total": total,
            "mean_kl": float(np.mean(kls)) if kls else None}


def run_simulation(cfg: ExperimentConfig) -> ExperimentReport:
    """Pseudo-label quality of each strategy on oracle detectors over the tau grid."""
    for s in cfg.strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"{s!r} is a training mode, not a labeling strategy")
    jobs = [(cfg, seed) for seed in cfg.seed_list()]
    runs = [r for rows in _pool_map(_simulate_job, jobs, cfg.workers) for r in rows]
    runs.sort(key=lambda r: (cfg.strategies.index(r["strategy"]), r["tau"], r["seed"]))
    summary = _summarize(runs, ("strategy", "tau"), ("pseudo_precision", "correct_count"))
    return ExperimentReport("simulate", config_echo(cfg), non_paper_defaults(cfg), runs, [], summary,
                            {"version": __version__})


# ---------------------------------------------------------------- offline dumps


def analyze_offline(sets_a: Sequence[DetectionSet], sets_b: Sequence[DetectionSet],
                    gt: Mapping[int, Sequence[GroundTruthBox]], strategies: Sequence[str],
                    taus: Sequence[float], cfg: MatchConfig = MatchConfig(),
                    synthesized: bool = False) -> ExperimentReport:
    """Apply each (strategy, tau) to two static detection dumps; no training.

    ``mean_kl`` is only reported for full-distribution dumps: synthesized
    distributions carry no information beyond the top score.
    """
    ids = check_compatible(sets_a, sets_b, gt)
    by_a = {s.image_id: s for s in sets_a}
    by_b = {s.image_id: s for s in sets_b}
    preds = [[by_a[i] for i in ids], [by_b[i] for i in ids]]
    gts = [gt[i] for i in ids]
    runs = []
    for strategy in strategies:
        if strategy not in STRATEGIES or strategy == "majority":
            raise ConfigError(f"{strategy!r} is not a two-detector labeling strategy")
        for tau in taus:
            row = _pseudo_quality(strategy, tau, preds, gts, cfg, with_kl=not synthesized)
            runs.append({"strategy": strategy, "tau": tau, **row})
    meta = {"version": __version__, "images": len(ids),
            "distributions": "synthesized" if synthesized else "native"}
    config = {"strategies": list(strategies), "taus": list(taus), "match": to_plain(cfg)}
    return ExperimentReport("analyze", config, {}, runs, [], [], meta)


def fuse_dumps(dumps: Sequence[Sequence[DetectionSet]], gt: Mapping[int, Sequence[GroundTruthBox]] | None,
               cfg: FusionConfig = FusionConfig()) -> Tuple[List[DetectionSet], ExperimentReport]:
    """WBF over several detectors' dumps, with AP50 of each input and of the fusion."""
    ids = sorted({s.image_id for d in dumps for s in d} | (set(gt) if gt is not None else set()))
    maps = [{s.image_id: s for s in d} for d in dumps]
    fused = []
    for i in ids:
        sets = [m.get(i, DetectionSet(i, ())) for m in maps]
        fused.append(wbf_fuse(sets, cfg))
    runs = []
    if gt is not None:
        for k, m in enumerate(maps):
            runs.append({"input": k, "ap50": ap50(m, gt)})
        runs.append({"input": "wbf", "ap50": ap50(fused, gt)})
    meta = {"version": __version__, "images": len(ids), "inputs": len(dumps)}
    return fused, ExperimentReport("fuse", {"fusion": to_plain(cfg)}, {}, runs, [], [], meta)


def _summarize(runs: Sequence[Dict[str, Any]], keys: Tuple[str, ...],
               metrics: Tuple[str, ...]) -> List[Dict[str, Any]]:
    groups: Dict[tuple, List[Dict[str, Any]]] = {}
    for r in runs:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, rows in groups.items():
        entry = dict(zip(keys, key))
        for m in metrics:
            vals = [r[m] for r in rows if r.get(m) is not None]
            s = summarize(vals)
            entry.update({f"{m}_mean": s["mean"], f"{m}_std": s["std"], f"{m}_n": s["n"]})
        out.append(entry)
    return out
