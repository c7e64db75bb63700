"""Conditional encoder / VAE decoder recovery model, training and checkpoints."""

from .checkpoint import CheckpointError, checkpoint_bytes, load_checkpoint, model_from_bytes, save_checkpoint
from .data import WindowDataset, frames_from_initial, make_frames
from .model import (
    GRAPH_DEFAULTS,
    TEMPORALS,
    VARIANTS,
    ConfigError,
    ModelConfig,
    StRecModel,
    decode,
    default_config,
    encode,
    loss,
)
from .train import TrainingError, TrainingHistory, TrainOptions, evaluate_loss, infer, infer_dataset, train

__all__ = [
    "CheckpointError", "checkpoint_bytes", "load_checkpoint", "model_from_bytes", "save_checkpoint",
    "WindowDataset", "frames_from_initial", "make_frames",
    "GRAPH_DEFAULTS", "TEMPORALS", "VARIANTS", "ConfigError", "ModelConfig", "StRecModel",
    "decode", "default_config", "encode", "loss",
    "TrainingError", "TrainingHistory", "TrainOptions", "evaluate_loss", "infer", "infer_dataset", "train",
]
