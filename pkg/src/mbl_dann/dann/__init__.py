"""Domain-adversarial phase classifier built on a small numpy layer library."""

from .checkpoint import load_checkpoint, save_checkpoint
from .model import Architecture, DannModel, pad_length_for, predict
from .train import EpochLog, TrainConfig, TrainResult, train, train_arrays, train_step

__all__ = [
    "Architecture",
    "DannModel",
    "EpochLog",
    "TrainConfig",
    "TrainResult",
    "load_checkpoint",
    "pad_length_for",
    "predict",
    "save_checkpoint",
    "train",
    "train_arrays",
    "train_step",
]
