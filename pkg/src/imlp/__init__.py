"""Incremental MLP with windowed prototype attention for tabular streams,
plus an energy-aware evaluation harness."""

__version__ = "0.1.0"

from .buffer import FeatureBuffer, segment_prototype
from .metrics import (
    EnergyProvider,
    PowerTrace,
    SegmentResult,
    balanced_accuracy,
    integrate_energy,
    log_loss,
    netscore,
    netscore_t,
)
from .model import ImlpConfig, ImlpParams, forward, init_params, loss_and_backward, predict
from .trainer import StreamSegment, TrainConfig, run_stream

__all__ = [
    "EnergyProvider",
    "FeatureBuffer",
    "ImlpConfig",
    "ImlpParams",
    "PowerTrace",
    "SegmentResult",
    "StreamSegment",
    "TrainConfig",
    "balanced_accuracy",
    "forward",
    "init_params",
    "integrate_energy",
    "log_loss",
    "loss_and_backward",
    "netscore",
    "netscore_t",
    "predict",
    "run_stream",
    "segment_prototype",
]
