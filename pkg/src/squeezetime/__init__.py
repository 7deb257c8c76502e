"""Squeezed-time video recognition networks in numpy.

The time axis of a clip is folded into the channel axis so the whole
network runs on 2D convolutions; channel-time learning blocks recover
temporal structure inside those channels.
"""
from .analysis import CostReport, analytic_complexity, count_flops, count_params
from .config import ConfigError, ModelConfig
from .data import SyntheticVideoSpec, VideoRecord, generate_dataset, make_views, read_dataset, sample_clip, write_dataset
from .model import Model, build_model, forward, squeeze_time, unsqueeze_time
from .train import TrainConfig, Trainer, evaluate_multiview, lr_schedule, sgd_step

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CostReport", "Model", "ModelConfig", "SyntheticVideoSpec", "TrainConfig", "Trainer",
    "VideoRecord", "analytic_complexity", "build_model", "count_flops", "count_params", "evaluate_multiview",
    "forward", "generate_dataset", "lr_schedule", "make_views", "read_dataset", "sample_clip", "sgd_step",
    "squeeze_time", "unsqueeze_time", "write_dataset",
]
