"""Experiment runner, dump ingestion and report emission."""

from .config import ExperimentConfig, load_config
from .dumps import load_detection_dump, load_ground_truth_dump, write_detection_dump, write_ground_truth_dump
from .experiments import analyze_offline, fuse_dumps, run_experiment, run_simulation
from .report import ExperimentReport, write_report

__all__ = [
    "ExperimentConfig", "ExperimentReport", "analyze_offline", "fuse_dumps", "load_config",
    "load_detection_dump", "load_ground_truth_dump", "run_experiment", "run_simulation",
    "write_detection_dump", "write_ground_truth_dump", "write_report",
]
