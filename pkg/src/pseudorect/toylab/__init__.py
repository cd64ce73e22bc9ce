"""Desk-scale simulator: synthetic scenes, oracle detectors and a trainable toy detector."""

from .detector import (
    ToyDetectorParams,
    consistency_loss,
    detection_loss,
    init_params,
    supervised_loss,
    toy_forward,
    unsupervised_loss,
    zero_params,
)
from .oracle import ConfidenceLaw, NoiseModel, oracle_predict
from .scenes import ToyScene, World, generate_scenes, make_world
from .training import (
    EmaState,
    OracleSeeding,
    TauSchedule,
    TrainConfig,
    TrainedResult,
    ema_update,
    lambda_schedule,
    train_run,
)

__all__ = [
    "ConfidenceLaw", "EmaState", "NoiseModel", "OracleSeeding", "TauSchedule", "ToyDetectorParams",
    "ToyScene", "TrainConfig", "TrainedResult", "World", "consistency_loss", "detection_loss",
    "ema_update", "generate_scenes", "init_params", "lambda_schedule", "make_world",
    "oracle_predict", "supervised_loss", "toy_forward", "train_run", "unsupervised_loss",
    "zero_params",
]
