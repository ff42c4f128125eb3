"""Range-view LiDAR place recognition: projection, descriptors, training and evaluation."""

from ._rvm import (
    ConfigError,
    ContractError,
    DegenerateInput,
    IoError,
    Pipeline,
    config_text,
    generate_world,
    imtrihard_loss,
    overlap,
    pr_metrics,
    project,
    recall_at,
    search,
    selfcheck,
    synth_sensor_config,
    train,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DegenerateInput",
    "IoError",
    "Pipeline",
    "config_text",
    "generate_world",
    "imtrihard_loss",
    "overlap",
    "pr_metrics",
    "project",
    "recall_at",
    "search",
    "selfcheck",
    "synth_sensor_config",
    "train",
]
