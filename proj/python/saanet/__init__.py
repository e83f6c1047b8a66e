"""Python bindings for the SAANet C++ library."""

from ._saanet import (
    ConfigError,
    ContractError,
    DimensionError,
    Metrics,
    ModelConfig,
    SaaNet,
    SceneSpec,
    annotation_map,
    backbone_shapes,
    compute_metrics,
    fit_line,
    generate_scene,
    load_run_config,
    real_bytes,
    run_experiment,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "Metrics",
    "ModelConfig",
    "SaaNet",
    "SceneSpec",
    "annotation_map",
    "backbone_shapes",
    "compute_metrics",
    "fit_line",
    "generate_scene",
    "load_run_config",
    "real_bytes",
    "run_experiment",
]
