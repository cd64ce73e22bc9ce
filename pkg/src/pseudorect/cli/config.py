"""YAML experiment configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple

import yaml

from ..core import MatchConfig
from ..errors import ConfigError, IoError, ValidationError
from ..fusion import FusionConfig
from ..metrics import ABLATIONS
from ..toylab.oracle import ConfidenceLaw, NoiseModel
from ..toylab.training import MODES, OracleSeeding, TauSchedule, TrainConfig

PAIR_MODES = ("cross_rectify", "co_rectify", "cps", "intersection", "difference")
SINGLE_MODES = ("online_teacher", "offline_teacher")

# values that come from the method's published setup; everything else is ours
PAPER_SOURCED = {"train.tau", "train.delta", "match.delta"}


@dataclass(frozen=True)
class DatasetConfig:
    num_classes: int = 8
    grid: int = 8
    features: int = 25
    k_max: int = 4
    labeled: int = 10
    unlabeled: int = 300
    test: int = 150
    seeding: int = 200
    objectness: float = 0.85
    signal: float = 2.5
    feature_noise: float = 0.35
    pair_similarity: float = 0.6
    geometry_noise: float = 0.05


@dataclass(frozen=True)
class NoiseConfig:
    """One oracle detector's error model, in config form."""

    flips: Tuple[Tuple[int, int, float], ...] = ()
    correct: Tuple[float, float] = (5.0, 2.0)
    wrong: Tuple[float, float] = (2.0, 3.0)
    jitter: float = 0.05
    miss_rate: float = 0.0
    spurious_rate: float = 0.0

    def build(self, num_classes: int) -> NoiseModel:
        flips = {}
        for src, dst, p in self.flips:
            if src in flips:
                raise ConfigError(f"class {src} flipped twice")
            flips[src] = (dst, p)
        try:
            return NoiseModel.with_flips(num_classes, flips,
                                         confidence_law=ConfidenceLaw(self.correct, self.wrong),
                                         localization_jitter=self.jitter,
                                         miss_rate=self.miss_rate,
                                         spurious_rate=self.spurious_rate)
        except (ValidationError, IndexError) as exc:
            raise ConfigError(f"bad noise model: {exc}") from exc


DEFAULT_NOISE = (
    NoiseConfig(flips=((0, 1, 0.35),)),
    NoiseConfig(flips=((2, 3, 0.35),)),
)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    seeds: int = 1
    workers: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    noise: Tuple[NoiseConfig, ...] = DEFAULT_NOISE
    train: TrainConfig = field(default_factory=TrainConfig)
    oracle_seeding: bool = False
    seeding_steps: int = 150
    match: MatchConfig = field(default_factory=MatchConfig)
    strategies: Tuple[str, ...] = ("self_label", "cross_rectify")
    taus: Tuple[float, ...] = (0.5,)
    ablations: Tuple[str, ...] = ("none",)
    out: str = "reports"

    def __post_init__(self):
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.strategies or not self.taus or not self.ablations:
            raise ConfigError("strategy, tau and ablation grids must be non-empty")
        for s in self.strategies:
            if s not in MODES:
                raise ConfigError(f"unknown strategy {s!r}")
        for a in self.ablations:
            if a not in ABLATIONS:
                raise ConfigError(f"unknown ablation {a!r}")
        for t in self.taus:
            if not (0.0 <= t < 1.0):
                raise ConfigError(f"tau {t!r} outside [0, 1)")
        if self.train.num_classes != self.dataset.num_classes:
            raise ConfigError("train.num_classes must equal dataset.num_classes")

    def seed_list(self) -> List[int]:
        return [self.seed + k for k in range(self.seeds)]

    def noise_models(self) -> List[NoiseModel]:
        return [n.build(self.dataset.num_classes) for n in self.noise]

    def detectors_for(self, mode: str) -> int:
        if mode in SINGLE_MODES:
            return 1
        if mode in PAIR_MODES:
            return 2
        return self.train.detectors

    def train_config(self, mode: str, seed: int, tau: float | None = None,
                     ablation: str = "none") -> TrainConfig:
        n = self.detectors_for(mode)
        seeding = None
        if self.oracle_seeding:
            models = self.noise_models()
            if len(models) < n:
                raise ConfigError(f"oracle seeding for {mode!r} needs {n} noise models")
            seeding = OracleSeeding(tuple(models[:n]), scenes=self.dataset.seeding,
                                    steps=self.seeding_steps)
        return dataclasses.replace(self.train, mode=mode, seed=seed, detectors=n,
                                   tau=self.train.tau if tau is None else tau,
                                   ablation=ablation, oracle_seeding=seeding)


def _build(cls, data: Any, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValidationError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _tuple(v, where: str) -> tuple:
    if isinstance(v, (list, tuple)):
        return tuple(v)
    raise ConfigError(f"{where}: expected a list")


def _noise(items: Any) -> Tuple[NoiseConfig, ...]:
    if not isinstance(items, list) or not items:
        raise ConfigError("noise: expected a non-empty list of detector error models")
    out = []
    for k, item in enumerate(items):
        item = dict(item or {})
        flips = []
        raw_flips = item.pop("flips", None) or {}
        if not isinstance(raw_flips, dict):
            raise ConfigError(f"noise[{k}].flips: expected a mapping class -> [target, probability]")
        for src, spec in raw_flips.items():
            dst, p = _tuple(spec, f"noise[{k}].flips.{src}")
            flips.append((int(src), int(dst), float(p)))
        for key in ("correct", "wrong"):
            if key in item:
                item[key] = tuple(float(x) for x in _tuple(item[key], f"noise[{k}].{key}"))
        cfg = _build(NoiseConfig, item, f"noise[{k}]")
        out.append(dataclasses.replace(cfg, flips=tuple(sorted(flips))))
    return tuple(out)


def _train(data: Any, num_classes: int) -> TrainConfig:
    data = dict(data or {})
    data.setdefault("num_classes", num_classes)
    sched = data.pop("tau_schedule", None)
    if sched is not None:
        if sched == "fixed":
            data["tau_schedule"] = TauSchedule()
        elif isinstance(sched, dict) and set(sched) == {"linear"}:
            start, end = _tuple(sched["linear"], "train.tau_schedule.linear")
            data["tau_schedule"] = TauSchedule("linear", float(start), float(end))
        else:
            raise ConfigError("train.tau_schedule: use 'fixed' or {linear: [from, to]}")
    if "fusion" in data:
        data["fusion"] = _build(FusionConfig, data["fusion"], "train.fusion")
    for key in ("mode", "seed", "ablation", "detectors", "oracle_seeding"):
        if key in data and key != "detectors":
            raise ConfigError(f"train.{key} is set by the experiment grid, not the train block")
    try:
        return _build(TrainConfig, data, "train")
    except ConfigError:
        raise


def config_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    raw = dict(raw)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    dataset = _build(DatasetConfig, raw.pop("dataset", None), "dataset")
    kw: Dict[str, Any] = {"dataset": dataset}
    if "noise" in raw:
        kw["noise"] = _noise(raw.pop("noise"))
    kw["train"] = _train(raw.pop("train", None), dataset.num_classes)
    if "match" in raw:
        kw["match"] = _build(MatchConfig, raw.pop("match"), "match")
    for key in ("strategies", "ablations"):
        if key in raw:
            kw[key] = tuple(str(x) for x in _tuple(raw.pop(key), key))
    if "taus" in raw:
        kw["taus"] = tuple(float(x) for x in _tuple(raw.pop("taus"), "taus"))
    kw.update(raw)
    try:
        return ExperimentConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return config_from_dict(raw or {})


def to_plain(obj: Any) -> Any:
    """JSON-ready view of a config tree (dataclasses, tuples, numpy arrays)."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, float) and obj == float("inf"):
        return "inf"
    return obj


def config_echo(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Config as echoed in reports; where the report goes and how many workers
    produced it do not change its content, so they are left out."""
    plain = to_plain(cfg)
    plain.pop("out")
    plain.pop("workers")
    return plain


def _flatten(prefix: str, value: Any, out: Dict[str, Any]) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else k, v, out)
    else:
        out[prefix] = value


def non_paper_defaults(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Every effective setting that does not come from the method's published setup."""
    flat: Dict[str, Any] = {}
    plain = to_plain(cfg)
    for key in ("dataset", "train", "match", "noise"):
        _flatten(key, plain[key], flat)
    flat.pop("train.oracle_seeding", None)
    return {k: v for k, v in sorted(flat.items()) if k not in PAPER_SOURCED}
