"""Parameter and FLOP audits, plus measured-vs-closed-form reconciliation.

Counting convention: one multiply-accumulate is one FLOP; convolutions,
fully-connected layers, and attention matrix products count, while
norms, activations, softmax, pooling, and residual adds do not. All
arithmetic uses Python integers, so totals cannot overflow.

`reconcile` cross-checks two independent routes over every attention
unit: the closed-form complexity formulas versus multiply-accumulates
actually executed by instrumented kernels on a live forward pass. The
two routes must agree to the integer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hatnet.tensor import Tensor, count_macs
from hatnet.attention import (
    AttentionParams,
    HMHSAConfig,
    complexity_hmhsa,
    complexity_mhsa,
    hmhsa,
    mhsa,
)
from hatnet.network import (
    Model,
    ModelConfig,
    STAGE_NAMES,
    effective_grid,
    param_spec,
    stage_spatial_sizes,
    validate_input_size,
)

__all__ = ["LayerCost", "UnitCheck", "CostReport", "count_params", "count_flops", "cost_rows", "reconcile"]


@dataclass(frozen=True)
class LayerCost:
    name: str
    params: int
    flops: int


@dataclass(frozen=True)
class UnitCheck:
    """One attention unit: formula value vs instrumented MAC count.

    `groups` maps each term group to (measured, expected). `out_proj`
    MACs are reported separately; the closed forms exclude them.
    """

    name: str
    kind: str
    h: int
    w: int
    c: int
    g1: Optional[int]
    g2: Optional[int]
    formula: int
    measured: int
    out_proj: int
    groups: dict
    ok: bool


@dataclass
class CostReport:
    input_h: int
    input_w: int
    batch: int
    rows: list = field(default_factory=list)
    units: list = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.rows)

    @property
    def all_units_ok(self) -> bool:
        return all(u.ok for u in self.units)

    def to_csv(self) -> str:
        lines = ["layer,params,flops"]
        for r in self.rows:
            lines.append(f"{r.name},{r.params},{r.flops}")
        lines.append(f"TOTAL,{self.total_params},{self.total_flops}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len(r.name) for r in self.rows) if self.rows else 5
        width = max(width, 5)
        lines = [f"{'layer':<{width}}  {'params':>12}  {'flops':>16}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.params:>12}  {r.flops:>16}")
        lines.append(f"{'TOTAL':<{width}}  {self.total_params:>12}  {self.total_flops:>16}")
        return "\n".join(lines)


def _config_of(model) -> ModelConfig:
    if isinstance(model, Model):
        return model.config
    if isinstance(model, ModelConfig):
        return model
    raise TypeError(f"expected Model or ModelConfig, got {type(model).__name__}")


def count_params(model) -> int:
    """Total trainable element count; independent of parameter values."""
    cfg = _config_of(model)
    total = 0
    for spec in param_spec(cfg):
        n = 1
        for d in spec.shape:
            n *= d
        total += n
    return total


def _norm_row(name: str, c: int) -> LayerCost:
    return LayerCost(name, 2 * c, 0)


def _conv_row(name: str, k: int, cin: int, cout: int, ho: int, wo: int, batch: int, groups: int = 1, bias: bool = False) -> LayerCost:
    params = k * k * (cin // groups) * cout + (cout if bias else 0)
    return LayerCost(name, params, batch * ho * wo * k * k * (cin // groups) * cout)


def cost_rows(model, input_h: int, input_w: int, batch: int = 1) -> list:
    """Per-layer (params, flops) rows; totals exactly sum the rows."""
    cfg = _config_of(model)
    validate_input_size(cfg, input_h, input_w)
    s0, s1 = cfg.stem_channels
    rows: list[LayerCost] = []

    h1, w1 = input_h // 2, input_w // 2
    h2, w2 = input_h // 4, input_w // 4
    rows.append(_conv_row("stem.conv1", 3, 3, s0, h1, w1, batch))
    rows.append(_norm_row("stem.norm1", s0))
    rows.append(_conv_row("stem.conv2", 3, s0, s1, h2, w2, batch))
    rows.append(_norm_row("stem.norm2", s1))

    sizes = stage_spatial_sizes(cfg, input_h, input_w)
    prev = s1
    for sname, stage, (h, w) in zip(STAGE_NAMES, cfg.stages, sizes):
        c = stage.channels
        if sname != "stage2":
            rows.append(_conv_row(f"{sname}.down.conv", 3, prev, c, h, w, batch))
            rows.append(_norm_row(f"{sname}.down.norm", c))
        n = h * w
        for j in range(stage.blocks):
            p = f"{sname}.block{j}"
            rows.append(_norm_row(f"{p}.norm1", c))
            if stage.attention_kind == "hierarchical":
                g1e = effective_grid(stage.g1, h, w)
                g2e = effective_grid(stage.g2, h, w)
                attn_flops = complexity_hmhsa(h, w, c, g1e, g2e) + n * c * c
                attn_params = 7 * c * c
            else:
                attn_flops = complexity_mhsa(h, w, c) + n * c * c
                attn_params = 4 * c * c
            rows.append(LayerCost(f"{p}.attn", attn_params, batch * attn_flops))
            rows.append(_norm_row(f"{p}.norm2", c))
            ec = c * stage.expansion
            k = stage.dw_kernel
            mlp_params = (c * ec + ec) + (k * k * ec + ec) + (ec * c + c)
            mlp_flops = n * c * ec + n * k * k * ec + n * ec * c
            rows.append(LayerCost(f"{p}.mlp", mlp_params, batch * mlp_flops))
        prev = c
    rows.append(_norm_row("head.norm", prev))
    rows.append(LayerCost("head.fc", prev * cfg.num_classes + cfg.num_classes, batch * prev * cfg.num_classes))
    return rows


def count_flops(model, input_h: int, input_w: int, batch: int = 1) -> int:
    """Whole-model multiply-accumulate count at the given input size."""
    return sum(r.flops for r in cost_rows(model, input_h, input_w, batch))


# --------------------------------------------------------------------------
# Measured-vs-formula reconciliation
# --------------------------------------------------------------------------

_UNIT_CACHE: dict = {}


def _rand_params(rng, c: int, heads: int, head_dim: int, with_wp: bool) -> AttentionParams:
    def w():
        return Tensor(rng.standard_normal((c, c)).astype(np.float32) * 0.05)

    return AttentionParams(
        wq=w(),
        wk=w(),
        wv=w(),
        wp=w() if with_wp else None,
        num_heads=heads,
        head_dim=head_dim,
    )


def _measure_unit(kind: str, h: int, w: int, c: int, g1: int, g2: int, heads: int):
    """Run one attention unit at batch 1 and bucket its MACs by label."""
    key = (kind, h, w, c, g1, g2, heads)
    if key in _UNIT_CACHE:
        return _UNIT_CACHE[key]
    rng = np.random.default_rng(0)
    head_dim = c // heads
    x = Tensor(rng.standard_normal((1, h, w, c)).astype(np.float32))
    with count_macs() as counter:
        if kind == "hierarchical":
            cfg = HMHSAConfig(
                g1=g1,
                g2=g2,
                params_local=_rand_params(rng, c, heads, head_dim, with_wp=False),
                params_global=_rand_params(rng, c, heads, head_dim, with_wp=True),
            )
            hmhsa(x, cfg)
        else:
            mhsa(Tensor(x.data.reshape(1, h * w, c)), _rand_params(rng, c, heads, head_dim, with_wp=True))
    _UNIT_CACHE[key] = counter.by_label()
    return _UNIT_CACHE[key]


def _check_unit(name: str, kind: str, h: int, w: int, c: int, g1: Optional[int], g2: Optional[int], heads: int) -> UnitCheck:
    n = h * w
    by_label = _measure_unit(kind, h, w, c, g1 or 0, g2 or 0, heads)
    if kind == "hierarchical":
        groups = {
            "projections_4hwc2": (
                by_label.get("local_proj", 0) + by_label.get("global_q_proj", 0),
                4 * n * c * c,
            ),
            "local_attention_2hwcg1^2": (by_label.get("local_attn", 0), 2 * n * c * g1 * g1),
            "global_kv_and_attention": (
                by_label.get("global_kv_proj", 0) + by_label.get("global_attn", 0),
                2 * (n // (g2 * g2)) * c * (c + n),
            ),
        }
        formula = complexity_hmhsa(h, w, c, g1, g2)
    else:
        groups = {
            "projections_3hwc2": (by_label.get("proj", 0), 3 * n * c * c),
            "attention_2h2w2c": (by_label.get("attn", 0), 2 * n * n * c),
        }
        formula = complexity_mhsa(h, w, c)
    out_proj = by_label.get("out_proj", 0)
    measured = sum(v for label, v in by_label.items() if label != "out_proj")
    ok = measured == formula and all(m == e for m, e in groups.values())
    return UnitCheck(
        name=name,
        kind=kind,
        h=h,
        w=w,
        c=c,
        g1=g1,
        g2=g2,
        formula=formula,
        measured=measured,
        out_proj=out_proj,
        groups=groups,
        ok=ok,
    )


def reconcile(model, input_h: int, input_w: int) -> CostReport:
    """Audit every attention unit: instrumented MACs vs closed forms.

    Discrepancies are recorded on the returned report (per-unit `ok`
    flags), never raised.
    """
    cfg = _config_of(model)
    report = CostReport(input_h=input_h, input_w=input_w, batch=1, rows=cost_rows(cfg, input_h, input_w))
    sizes = stage_spatial_sizes(cfg, input_h, input_w)
    for sname, stage, (h, w) in zip(STAGE_NAMES, cfg.stages, sizes):
        c = stage.channels
        heads = c // cfg.head_dim
        for j in range(stage.blocks):
            name = f"{sname}.block{j}.attn"
            if stage.attention_kind == "hierarchical":
                g1e = effective_grid(stage.g1, h, w)
                g2e = effective_grid(stage.g2, h, w)
                report.units.append(_check_unit(name, "hierarchical", h, w, c, g1e, g2e, heads))
            else:
                report.units.append(_check_unit(name, "dense", h, w, c, None, None, heads))
    return report
