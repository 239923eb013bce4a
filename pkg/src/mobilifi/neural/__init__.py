"""Numpy neural networks for channel denoising and tracking."""

from .cdrn import (
    Cdrn,
    CdrnConfig,
    TrainingDivergedError,
    TrainingPair,
    build_training_pairs,
    cdrn_forward,
    cdrn_train,
    nmse_loss,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .metrics import delta_h, nmse
from .recurrent import (
    LstmParams,
    LstmRegressor,
    RnnRegressor,
    TrackerConfig,
    TrackingResult,
    lstm_cell,
    naive_prediction,
    track_channel,
)

__all__ = [
    "Cdrn",
    "CdrnConfig",
    "CheckpointError",
    "LstmParams",
    "LstmRegressor",
    "RnnRegressor",
    "TrackerConfig",
    "TrackingResult",
    "TrainingDivergedError",
    "TrainingPair",
    "build_training_pairs",
    "cdrn_forward",
    "cdrn_train",
    "delta_h",
    "load_checkpoint",
    "lstm_cell",
    "naive_prediction",
    "nmse",
    "nmse_loss",
    "save_checkpoint",
    "track_channel",
]
