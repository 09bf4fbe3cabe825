"""Run configuration: a flat, human-readable key=value file with full
defaulting.  Unknown keys are rejected and every command writes its fully
resolved configuration next to its outputs so a run can be reproduced
from the snapshot alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SyntheticSpec
from .localize import DEFAULT_EVAL_IOUS, LocalizeConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


# key -> (default, parser); None defaults carry an explicit parser tag
_SCHEMA = {
    # synthetic dataset
    "num_classes": 5,
    "segments_per_video": 64,
    "feature_dim": 32,
    "actions_per_video_min": 1,
    "actions_per_video_max": 3,
    "action_length_min": 4,
    "action_length_max": 12,
    "scene_correlation": 0.8,
    "co_scene_fraction": 0.3,
    "noise_sigma": 0.1,
    "train_videos": 200,
    "test_videos": 100,
    # training
    "alpha": 0.25,
    "gamma": 0.6,
    "ctg_k": 3,
    "inflate_delta": 1,
    "topk_divisor": 8,
    "lr": 5e-4,
    "weight_decay": 1e-3,
    "ema_momentum": 0.999,
    "batch_size": 10,
    "steps_per_iteration": 1500,
    "iterations": 3,
    "ctg_mode": "max",
    "hidden_dim": "auto",
    "use_norm_loss": True,
    "use_guide_loss": True,
    "use_cas_loss": True,
    "use_inter_tca": True,
    "use_intra_tca": True,
    "teacher_augmentation": "intra_tca",
    # localization / evaluation
    "class_threshold": 0.2,
    "nms_iou": 0.45,
    "proposal_threshold_min": 0.10,
    "proposal_threshold_max": 0.90,
    "proposal_threshold_step": 0.05,
    "outer_only": False,
    "eval_ious": "0.1,0.2,0.3,0.4,0.5,0.6,0.7",
    "report_videos": 5,
    # shared
    "seed": 0,
}


def _parse_value(key: str, raw: str):
    default = _SCHEMA[key]
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
    return raw


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = [part.strip() for part in stripped.split("=", 1)]
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = dict(_SCHEMA)
        for key, val in self.values.items():
            if key not in _SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            merged[key] = val
        self.values = merged

    def __getitem__(self, key: str):
        return self.values[key]

    def override(self, **kwargs) -> "RunConfig":
        vals = {k: v for k, v in self.values.items()}
        for key, val in kwargs.items():
            if val is not None:
                vals[key] = val
        return RunConfig(values=vals)

    def synthetic_spec(self) -> SyntheticSpec:
        v = self.values
        return SyntheticSpec(
            num_classes=v["num_classes"],
            segments_per_video=v["segments_per_video"],
            feature_dim=v["feature_dim"],
            actions_per_video=(v["actions_per_video_min"], v["actions_per_video_max"]),
            action_length=(v["action_length_min"], v["action_length_max"]),
            scene_correlation=v["scene_correlation"],
            co_scene_fraction=v["co_scene_fraction"],
            noise_sigma=v["noise_sigma"],
            train_videos=v["train_videos"],
            test_videos=v["test_videos"],
            seed=v["seed"])

    def train_config(self) -> TrainConfig:
        v = self.values
        hidden = None if v["hidden_dim"] == "auto" else int(v["hidden_dim"])
        return TrainConfig(
            alpha=v["alpha"], gamma=v["gamma"], ctg_k=v["ctg_k"],
            inflate_delta=v["inflate_delta"], topk_divisor=v["topk_divisor"],
            lr=v["lr"], weight_decay=v["weight_decay"],
            ema_momentum=v["ema_momentum"], batch_size=v["batch_size"],
            steps_per_iteration=v["steps_per_iteration"],
            iterations=v["iterations"], ctg_mode=v["ctg_mode"], seed=v["seed"],
            hidden_dim=hidden,
            use_norm_loss=v["use_norm_loss"], use_guide_loss=v["use_guide_loss"],
            use_cas_loss=v["use_cas_loss"], use_inter_tca=v["use_inter_tca"],
            use_intra_tca=v["use_intra_tca"],
            teacher_augmentation=v["teacher_augmentation"])

    def localize_config(self) -> LocalizeConfig:
        v = self.values
        lo, hi, step = (v["proposal_threshold_min"], v["proposal_threshold_max"],
                        v["proposal_threshold_step"])
        if step <= 0 or hi < lo:
            raise ConfigError("invalid proposal threshold range")
        thresholds = tuple(np.round(np.arange(lo, hi + step / 2, step), 6))
        return LocalizeConfig(class_threshold=v["class_threshold"],
                              nms_iou=v["nms_iou"],
                              proposal_thresholds=thresholds,
                              topk_divisor=v["topk_divisor"],
                              outer_only=v["outer_only"])

    def eval_ious(self) -> tuple:
        raw = str(self.values["eval_ious"])
        try:
            ious = tuple(float(x) for x in raw.split(",") if x.strip())
        except ValueError as exc:
            raise ConfigError(f"eval_ious: bad list {raw!r}") from exc
        if not ious:
            raise ConfigError("eval_ious must not be empty")
        return ious

    def resolved_text(self) -> str:
        lines = [f"{key} = {_format_value(self.values[key])}"
                 for key in sorted(self.values)]
        return "\n".join(lines) + "\n"


def _format_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return f"{val:.12g}"
    return str(val)


def load_run_config(path=None, **overrides) -> RunConfig:
    values: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            values = parse_config_text(fh.read())
    cfg = RunConfig(values=values)
    return cfg.override(**overrides)


DEFAULT_EVAL_IOUS_STR = ",".join(str(x) for x in DEFAULT_EVAL_IOUS)
