"""Backbone assembly: stem, four attention stages, classifier head.

Layout at input S x S (S divisible by 4):

- stem: two 3x3 stride-2 convolutions (norm + activation after each),
  leaving an S/4 map at the first stage's channel count.
- stages 2..5: pre-norm transformer blocks. Stages 2-4 use hierarchical
  attention; stage 5 runs dense attention over its small map. Stages
  3-5 each start with a 3x3 stride-2 downsampling convolution.
- head: norm, global average pool, fully-connected classifier.

Block wiring (pre-norm, residuals anchored at the unnormalized input):

    y = x + attn(norm(x))        # attn output already projected by Wp
    out = y + mlp(norm(y))       # fc expand -> act -> depthwise conv -> act -> fc project

Grid sizes are clamped to the current map (g_eff = min(g, H, W)) so one
schedule serves several input resolutions; after clamping, g_eff must
divide the map exactly. Parameter names and shapes never depend on the
grid schedule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from hatnet.tensor import (
    ConfigError,
    ShapeError,
    Tensor,
    activation,
    add,
    conv2d,
    layer_norm,
    matmul,
    reduce_mean,
    reshape,
)
from hatnet.attention import AttentionParams, HMHSAConfig, hmhsa_core, mhsa_core

__all__ = [
    "StageConfig",
    "ModelConfig",
    "Model",
    "Block",
    "ParamSpec",
    "CONFIGS",
    "GRID_SCHEDULES",
    "VARIANT_NAMES",
    "named_config",
    "toy_config",
    "gradcheck_config",
    "param_spec",
    "build_model",
    "init_params",
    "transformer_block_forward",
    "forward",
    "effective_grid",
    "stage_spatial_sizes",
    "validate_input_size",
]

ATTENTION_KINDS = ("hierarchical", "dense")
ACTIVATIONS = ("silu", "gelu")
STAGE_NAMES = ("stage2", "stage3", "stage4", "stage5")


@dataclass(frozen=True)
class StageConfig:
    """One stage row: width, depth, MLP shape, grid schedule, attention kind."""

    channels: int
    blocks: int
    dw_kernel: int
    expansion: int
    g1: int
    g2: int
    attention_kind: str

    def __post_init__(self):
        if self.channels < 1 or self.blocks < 1 or self.expansion < 1:
            raise ConfigError(f"stage sizes must be positive: {self}")
        if self.dw_kernel < 1 or self.dw_kernel % 2 == 0:
            raise ConfigError(f"dw_kernel must be odd and positive, got {self.dw_kernel}")
        if self.g1 < 1 or self.g2 < 1:
            raise ConfigError(f"grid sizes must be positive, got g1={self.g1}, g2={self.g2}")
        if self.attention_kind not in ATTENTION_KINDS:
            raise ConfigError(f"attention_kind must be one of {ATTENTION_KINDS}, got {self.attention_kind!r}")


@dataclass(frozen=True)
class ModelConfig:
    stem_channels: tuple
    stages: tuple
    head_dim: int
    num_classes: int = 1000
    activation: str = "silu"

    def __post_init__(self):
        stem = tuple(int(c) for c in self.stem_channels)
        if len(stem) != 2 or min(stem) < 1:
            raise ConfigError(f"stem_channels must be two positive widths, got {self.stem_channels}")
        object.__setattr__(self, "stem_channels", stem)
        stages = tuple(self.stages)
        if len(stages) != 4 or not all(isinstance(s, StageConfig) for s in stages):
            raise ConfigError("a model has exactly four StageConfig stages")
        object.__setattr__(self, "stages", stages)
        if stem[1] != stages[0].channels:
            raise ConfigError(
                f"second stem width {stem[1]} must equal the first stage's channels {stages[0].channels}"
            )
        if self.head_dim < 1:
            raise ConfigError(f"head_dim must be positive, got {self.head_dim}")
        for name, s in zip(STAGE_NAMES, stages):
            if s.channels % self.head_dim:
                raise ConfigError(
                    f"{name} channels {s.channels} not divisible by head_dim {self.head_dim}"
                )
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be positive, got {self.num_classes}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")


# Named variants. Grid schedules are (g1, g2) for the three hierarchical
# stages; stage 5 attends densely and takes no grids.
CONFIGS = {
    "tiny": dict(
        stem=(16, 48),
        channels=(48, 96, 240, 384),
        blocks=(2, 2, 6, 3),
        dw_kernels=(3, 3, 3, 3),
        expansions=(8, 8, 4, 4),
        head_dim=48,
    ),
    "small": dict(
        stem=(16, 64),
        channels=(64, 128, 320, 512),
        blocks=(2, 3, 8, 3),
        dw_kernels=(3, 3, 3, 3),
        expansions=(8, 8, 4, 4),
        head_dim=64,
    ),
    "medium": dict(
        stem=(16, 64),
        channels=(64, 128, 320, 512),
        blocks=(3, 6, 18, 3),
        dw_kernels=(5, 3, 5, 3),
        expansions=(8, 8, 4, 4),
        head_dim=64,
    ),
    "large": dict(
        stem=(16, 64),
        channels=(64, 128, 320, 640),
        blocks=(3, 8, 27, 3),
        dw_kernels=(3, 3, 3, 3),
        expansions=(8, 8, 4, 4),
        head_dim=64,
    ),
}

GRID_SCHEDULES = {
    "classification": ((8, 8), (7, 4), (7, 2)),
    "dense": ((8, 16), (8, 8), (8, 4)),
}

VARIANT_NAMES = tuple(CONFIGS)


def _assemble(base: dict, grids, num_classes: int, act: str) -> ModelConfig:
    stages = []
    for i in range(4):
        if i < 3:
            g1, g2 = grids[i]
            kind = "hierarchical"
        else:
            g1 = g2 = 1
            kind = "dense"
        stages.append(
            StageConfig(
                channels=base["channels"][i],
                blocks=base["blocks"][i],
                dw_kernel=base["dw_kernels"][i],
                expansion=base["expansions"][i],
                g1=g1,
                g2=g2,
                attention_kind=kind,
            )
        )
    return ModelConfig(
        stem_channels=base["stem"],
        stages=tuple(stages),
        head_dim=base["head_dim"],
        num_classes=num_classes,
        activation=act,
    )


def named_config(
    variant: str,
    grids: str = "classification",
    num_classes: int = 1000,
    activation: str = "silu",
) -> ModelConfig:
    """Stock configuration for one of the four named variants."""
    if variant not in CONFIGS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(CONFIGS)}")
    if grids not in GRID_SCHEDULES:
        raise ConfigError(f"unknown grid schedule {grids!r}; choose from {sorted(GRID_SCHEDULES)}")
    return _assemble(CONFIGS[variant], GRID_SCHEDULES[grids], num_classes, activation)


def toy_config(num_classes: int = 3) -> ModelConfig:
    """Reduced model for 32x32 training demos (~0.5M parameters)."""
    base = dict(
        stem=(8, 16),
        channels=(16, 32, 64, 128),
        blocks=(1, 1, 2, 1),
        dw_kernels=(3, 3, 3, 3),
        expansions=(4, 4, 4, 4),
        head_dim=16,
    )
    return _assemble(base, ((4, 4), (4, 2), (4, 1)), num_classes, "silu")


def gradcheck_config(num_classes: int = 3) -> ModelConfig:
    """Miniature model (~20k parameters, 16x16 input) for gradient checks."""
    base = dict(
        stem=(4, 8),
        channels=(8, 12, 16, 24),
        blocks=(1, 1, 1, 1),
        dw_kernels=(3, 3, 3, 3),
        expansions=(2, 2, 2, 2),
        head_dim=4,
    )
    return _assemble(base, ((2, 2), (2, 1), (1, 1)), num_classes, "silu")


# --------------------------------------------------------------------------
# Parameter tree
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    init: str  # trunc | conv | ones | zeros
    fan_out: int = 0


def param_spec(cfg: ModelConfig) -> list:
    """Canonical parameter list; order and names are a function of the config."""
    s0, s1 = cfg.stem_channels
    out: list[ParamSpec] = []

    def conv(name, k, cin, cout, groups=1):
        out.append(ParamSpec(name, (k, k, cin // groups, cout), "conv", k * k * (cout // groups)))

    def norm(prefix, c):
        out.append(ParamSpec(f"{prefix}.gamma", (c,), "ones"))
        out.append(ParamSpec(f"{prefix}.beta", (c,), "zeros"))

    def linear(name, cin, cout):
        out.append(ParamSpec(name, (cin, cout), "trunc"))

    conv("stem.conv1.w", 3, 3, s0)
    norm("stem.norm1", s0)
    conv("stem.conv2.w", 3, s0, s1)
    norm("stem.norm2", s1)

    prev = s1
    for sname, stage in zip(STAGE_NAMES, cfg.stages):
        c = stage.channels
        if sname != "stage2":
            conv(f"{sname}.down.conv.w", 3, prev, c)
            norm(f"{sname}.down.norm", c)
        for j in range(stage.blocks):
            p = f"{sname}.block{j}"
            norm(f"{p}.norm1", c)
            if stage.attention_kind == "hierarchical":
                for branch in ("local", "global"):
                    for w in ("wq", "wk", "wv"):
                        linear(f"{p}.attn.{branch}.{w}", c, c)
            else:
                for w in ("wq", "wk", "wv"):
                    linear(f"{p}.attn.{w}", c, c)
            linear(f"{p}.attn.wp", c, c)
            norm(f"{p}.norm2", c)
            ec = c * stage.expansion
            linear(f"{p}.mlp.fc1.w", c, ec)
            out.append(ParamSpec(f"{p}.mlp.fc1.b", (ec,), "zeros"))
            conv(f"{p}.mlp.dw.w", stage.dw_kernel, ec, ec, groups=ec)
            out.append(ParamSpec(f"{p}.mlp.dw.b", (ec,), "zeros"))
            linear(f"{p}.mlp.fc2.w", ec, c)
            out.append(ParamSpec(f"{p}.mlp.fc2.b", (c,), "zeros"))
        prev = c
    norm("head.norm", prev)
    linear("head.fc.w", prev, cfg.num_classes)
    out.append(ParamSpec("head.fc.b", (cfg.num_classes,), "zeros"))
    return out


class Model:
    """Configuration plus named parameter tensors, in canonical order."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params: dict[str, Tensor] = {}
        for spec in param_spec(config):
            self.params[spec.name] = Tensor(np.zeros(spec.shape, dtype=np.float32), name=spec.name)

    def astype(self, dtype) -> "Model":
        other = Model(self.config)
        for name, t in self.params.items():
            other.params[name].data = t.data.astype(dtype)
        return other

    def block(self, stage_index: int, block_index: int) -> "Block":
        stage = self.config.stages[stage_index]
        prefix = f"{STAGE_NAMES[stage_index]}.block{block_index}"
        return Block(
            kind=stage.attention_kind,
            g1=stage.g1,
            g2=stage.g2,
            dw_kernel=stage.dw_kernel,
            expansion=stage.expansion,
            activation=self.config.activation,
            num_heads=stage.channels // self.config.head_dim,
            head_dim=self.config.head_dim,
            tensors={
                name[len(prefix) + 1 :]: t
                for name, t in self.params.items()
                if name.startswith(prefix + ".")
            },
        )

    def blocks(self) -> Iterator:
        for i, stage in enumerate(self.config.stages):
            for j in range(stage.blocks):
                yield i, j, self.block(i, j)


@dataclass(frozen=True, eq=False)
class Block:
    """View of one transformer block's tensors plus its static settings."""

    kind: str
    g1: int
    g2: int
    dw_kernel: int
    expansion: int
    activation: str
    num_heads: int
    head_dim: int
    tensors: dict

    @property
    def channels(self) -> int:
        return self.num_heads * self.head_dim

    def dense_params(self) -> AttentionParams:
        t = self.tensors
        return AttentionParams(
            wq=t["attn.wq"],
            wk=t["attn.wk"],
            wv=t["attn.wv"],
            wp=t["attn.wp"],
            num_heads=self.num_heads,
            head_dim=self.head_dim,
        )

    def hmhsa_config(self, h: int, w: int) -> HMHSAConfig:
        t = self.tensors
        local = AttentionParams(
            wq=t["attn.local.wq"],
            wk=t["attn.local.wk"],
            wv=t["attn.local.wv"],
            num_heads=self.num_heads,
            head_dim=self.head_dim,
        )
        glob = AttentionParams(
            wq=t["attn.global.wq"],
            wk=t["attn.global.wk"],
            wv=t["attn.global.wv"],
            wp=t["attn.wp"],
            num_heads=self.num_heads,
            head_dim=self.head_dim,
        )
        return HMHSAConfig(
            g1=effective_grid(self.g1, h, w),
            g2=effective_grid(self.g2, h, w),
            params_local=local,
            params_global=glob,
        )


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    """Create and initialize the full parameter tree."""
    return init_params(Model(cfg), seed)


def _trunc_normal(rng: np.random.Generator, shape: tuple, std: float, bound: float = 2.0) -> np.ndarray:
    out = rng.standard_normal(shape) * std
    lo, hi = -bound * std, bound * std
    bad = (out < lo) | (out > hi)
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = (out < lo) | (out > hi)
    return out


def init_params(model: Model, seed: int = 0) -> Model:
    """Deterministic initialization, one draw stream over canonical order.

    Linear/attention weights: truncated normal, std 0.02, clipped at two
    standard deviations. Convolutions: normal with per-group fan-out
    scaling, std sqrt(2/fan_out). Norm gains 1, everything else 0.
    """
    rng = np.random.default_rng(seed)
    for spec in param_spec(model.config):
        t = model.params[spec.name]
        if spec.init == "trunc":
            values = _trunc_normal(rng, spec.shape, 0.02)
        elif spec.init == "conv":
            values = rng.standard_normal(spec.shape) * np.sqrt(2.0 / spec.fan_out)
        elif spec.init == "ones":
            values = np.ones(spec.shape)
        else:
            values = np.zeros(spec.shape)
        t.data = np.ascontiguousarray(values.astype(t.dtype))
    return model


# --------------------------------------------------------------------------
# Forward pass
# --------------------------------------------------------------------------


def effective_grid(g: int, h: int, w: int) -> int:
    """Clamp a nominal grid size to the current map extent."""
    return min(int(g), int(h), int(w))


def transformer_block_forward(x: Tensor, block: Block) -> Tensor:
    """One pre-norm block: attention sub-layer then conv-augmented MLP."""
    if x.ndim != 4:
        raise ShapeError(f"block input must be [B,H,W,C], got {x.shape}")
    b, h, w, c = x.shape
    if c != block.channels:
        raise ConfigError(f"block expects {block.channels} channels, input has {c}")
    t = block.tensors

    u = layer_norm(x, t["norm1.gamma"], t["norm1.beta"])
    if block.kind == "dense":
        core = mhsa_core(reshape(u, (b, h * w, c)), block.dense_params())
        core = reshape(core, (b, h, w, c))
    else:
        core = hmhsa_core(u, block.hmhsa_config(h, w))
    y = add(x, core)

    v = layer_norm(y, t["norm2.gamma"], t["norm2.beta"])
    ec = c * block.expansion
    mid = add(matmul(reshape(v, (b, h * w, c)), t["mlp.fc1.w"]), t["mlp.fc1.b"])
    mid = activation(mid, block.activation)
    mid = conv2d(reshape(mid, (b, h, w, ec)), t["mlp.dw.w"], t["mlp.dw.b"], groups=ec)
    mid = activation(mid, block.activation)
    out = add(matmul(reshape(mid, (b, h * w, ec)), t["mlp.fc2.w"]), t["mlp.fc2.b"])
    return add(y, reshape(out, (b, h, w, c)))


def _halve(size: int) -> int:
    # 3x3 stride-2 pad-1 output extent
    return (size - 1) // 2 + 1


def stage_spatial_sizes(cfg: ModelConfig, hin: int, win: int) -> list:
    """(H, W) of the map entering each stage's blocks."""
    h, w = hin // 4, win // 4
    sizes = [(h, w)]
    for _ in range(3):
        h, w = _halve(h), _halve(w)
        sizes.append((h, w))
    return sizes


def validate_input_size(cfg: ModelConfig, hin: int, win: int) -> None:
    """Raise ConfigError unless every stage's grids divide its map."""
    if hin < 4 or win < 4 or hin % 4 or win % 4:
        raise ConfigError(f"input size {hin}x{win} must be a multiple of 4 (two stride-2 stem convs)")
    for name, stage, (h, w) in zip(STAGE_NAMES, cfg.stages, stage_spatial_sizes(cfg, hin, win)):
        if stage.attention_kind != "hierarchical":
            continue
        for label, g in (("g1", stage.g1), ("g2", stage.g2)):
            ge = effective_grid(g, h, w)
            if h % ge or w % ge:
                raise ConfigError(
                    f"input {hin}x{win}: {name} map is {h}x{w}, which effective {label}={ge} "
                    f"(nominal {g}) does not divide"
                )


def forward(model: Model, images: Tensor) -> Tensor:
    """Images [B,Hin,Win,3] to logits [B,num_classes]."""
    if images.ndim != 4 or images.shape[3] != 3:
        raise ShapeError(f"forward expects [B,H,W,3] images, got {images.shape}")
    cfg = model.config
    validate_input_size(cfg, images.shape[1], images.shape[2])
    p = model.params
    act = cfg.activation

    x = conv2d(images, p["stem.conv1.w"], stride=2)
    x = activation(layer_norm(x, p["stem.norm1.gamma"], p["stem.norm1.beta"]), act)
    x = conv2d(x, p["stem.conv2.w"], stride=2)
    x = activation(layer_norm(x, p["stem.norm2.gamma"], p["stem.norm2.beta"]), act)

    for i, (sname, stage) in enumerate(zip(STAGE_NAMES, cfg.stages)):
        if i > 0:
            x = conv2d(x, p[f"{sname}.down.conv.w"], stride=2)
            x = activation(layer_norm(x, p[f"{sname}.down.norm.gamma"], p[f"{sname}.down.norm.beta"]), act)
        for j in range(stage.blocks):
            x = transformer_block_forward(x, model.block(i, j))

    x = layer_norm(x, p["head.norm.gamma"], p["head.norm.beta"])
    pooled = reduce_mean(x, axis=(1, 2))
    return add(matmul(pooled, p["head.fc.w"]), p["head.fc.b"])
