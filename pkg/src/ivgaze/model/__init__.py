"""Toy numpy implementation of the dual-stream gaze transformer."""

from .gazedptr import (
    GAZE_TERMS,
    PRESETS,
    ZONE_TERMS,
    ForwardOutputs,
    GazeBatch,
    ModelConfig,
    PixelStats,
    backward,
    batch_from_dataset,
    forward,
    init_params,
    loss_terms,
    loss_total,
    preset,
)
from .params import ToyModelParams

__all__ = [
    "GAZE_TERMS",
    "PRESETS",
    "ZONE_TERMS",
    "ForwardOutputs",
    "GazeBatch",
    "ModelConfig",
    "PixelStats",
    "ToyModelParams",
    "backward",
    "batch_from_dataset",
    "forward",
    "init_params",
    "loss_terms",
    "loss_total",
    "preset",
]
