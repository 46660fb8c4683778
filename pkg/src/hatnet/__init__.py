"""Hierarchical-attention vision backbone: kernels, models, and analysis tools."""

from hatnet.tensor import (
    ConfigError,
    ContractError,
    DivisibilityError,
    GradTape,
    NumericError,
    ShapeError,
    Tensor,
    backward,
    finite_diff_gradient,
)
from hatnet.attention import (
    AttentionParams,
    HMHSAConfig,
    complexity_hmhsa,
    complexity_mhsa,
    grid_merge,
    grid_partition,
    hmhsa,
    hmhsa_global,
    hmhsa_local,
    mhsa,
)
from hatnet.network import (
    CONFIGS,
    ModelConfig,
    StageConfig,
    build_model,
    forward,
    init_params,
    transformer_block_forward,
)
from hatnet.weights import WeightsBundle, load_weights, save_weights
from hatnet.analysis import CostReport, count_flops, count_params, reconcile

__version__ = "1.0.0"

__all__ = [
    "Tensor",
    "GradTape",
    "backward",
    "finite_diff_gradient",
    "ShapeError",
    "DivisibilityError",
    "ContractError",
    "ConfigError",
    "NumericError",
    "AttentionParams",
    "HMHSAConfig",
    "mhsa",
    "grid_partition",
    "grid_merge",
    "hmhsa_local",
    "hmhsa_global",
    "hmhsa",
    "complexity_mhsa",
    "complexity_hmhsa",
    "StageConfig",
    "ModelConfig",
    "CONFIGS",
    "build_model",
    "transformer_block_forward",
    "forward",
    "init_params",
    "WeightsBundle",
    "save_weights",
    "load_weights",
    "CostReport",
    "count_params",
    "count_flops",
    "reconcile",
    "__version__",
]
