"""Command-line entry point.

Exit codes: 0 success, 1 configuration or validation failure, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .. import __version__
from ..errors import (
    ConfigError,
    IncompatibleDumps,
    IoError,
    ParseError,
    PseudoRectError,
    SchemaError,
    ValidationError,
)
from ..rectify import STRATEGIES
from .config import ExperimentConfig, load_config
from .dumps import FORMATS, load_detection_dump, load_ground_truth_dump, write_detection_dump
from .experiments import analyze_offline, fuse_dumps, run_experiment, run_simulation
from .report import write_report

log = logging.getLogger("pseudorect")

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, help="report directory (overrides the config)")
    p.add_argument("--workers", type=int, help="parallel grid points")
    p.add_argument("-v", "--verbose", action="store_true")


def _dump_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=FORMATS, default="native", help="detection dump format")
    p.add_argument("--num-classes", type=int, help="class count for score-only dumps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pseudorect",
                                     description="Pseudo-label rectification experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="pseudo-label quality on oracle detectors")
    _common(p)
    p = sub.add_parser("train", help="toy semi-supervised training over the strategy grid")
    _common(p)
    p = sub.add_parser("sweep", help="toy training over the tau x strategy x ablation grid")
    _common(p)

    p = sub.add_parser("analyze", help="apply strategies to two static detection dumps")
    _common(p)
    _dump_args(p)
    p.add_argument("--dets-a", type=Path, required=True)
    p.add_argument("--dets-b", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--strategies", nargs="+", choices=[s for s in STRATEGIES if s != "majority"])
    p.add_argument("--taus", nargs="+", type=float)

    p = sub.add_parser("fuse", help="weighted boxes fusion over detection dumps")
    _common(p)
    _dump_args(p)
    p.add_argument("--dets", type=Path, nargs="+", required=True)
    p.add_argument("--gt", type=Path)
    return parser


def _resolve(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out"] = str(args.out)
    if args.workers is not None:
        over["workers"] = args.workers
    return dataclasses.replace(cfg, **over) if over else cfg


def _num_classes(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    return args.num_classes if args.num_classes is not None else cfg.dataset.num_classes


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _resolve(args)
    out = Path(cfg.out)
    if args.command == "simulate":
        report = run_simulation(cfg)
    elif args.command == "train":
        report = run_experiment(cfg, "train")
    elif args.command == "sweep":
        report = run_experiment(cfg, "sweep", taus=cfg.taus)
    elif args.command == "analyze":
        c = _num_classes(args, cfg)
        sets_a = load_detection_dump(args.dets_a, args.format, c)
        sets_b = load_detection_dump(args.dets_b, args.format, c)
        gt = load_ground_truth_dump(args.gt)
        strategies = args.strategies or [s for s in cfg.strategies if s in STRATEGIES]
        report = analyze_offline(sets_a, sets_b, gt, strategies, args.taus or list(cfg.taus),
                                 cfg.match, synthesized=args.format == "score_only")
    else:
        c = _num_classes(args, cfg)
        dumps = [load_detection_dump(p, args.format, c) for p in args.dets]
        gt = load_ground_truth_dump(args.gt) if args.gt else None
        fused, report = fuse_dumps(dumps, gt, cfg.train.fusion)
        write_detection_dump(out / "fused.jsonl", fused)
    paths = write_report(report, out)
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    try:
        return run(argv)
    except (IoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValidationError, ParseError, SchemaError, IncompatibleDumps,
            PseudoRectError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
