"""Weakly-supervised temporal action localization with a bidirectional
semantic consistency constraint, on a synthetic co-scene confound
benchmark."""

from .data import (Dataset, SyntheticSpec, VideoSample, generate_synthetic,
                   load_dataset, resample_time, save_dataset)
from .estimator import BaselineLocalizer, BiSccLocalizer
from .localize import (LocalizeConfig, Proposal, evaluate_map, localize_video,
                       nms, outer_inner_score, temporal_iou)
from .network import ModelParams, init_params, load_params, save_params
from .trainer import (BranchState, TrainConfig, iterate, train_baseline,
                      train_biscc)

__version__ = "0.1.0"

__all__ = [
    "BaselineLocalizer",
    "BiSccLocalizer",
    "BranchState",
    "Dataset",
    "LocalizeConfig",
    "ModelParams",
    "Proposal",
    "SyntheticSpec",
    "TrainConfig",
    "VideoSample",
    "evaluate_map",
    "generate_synthetic",
    "init_params",
    "iterate",
    "load_dataset",
    "load_params",
    "localize_video",
    "nms",
    "outer_inner_score",
    "resample_time",
    "save_dataset",
    "save_params",
    "temporal_iou",
    "train_baseline",
    "train_biscc",
    "__version__",
]
