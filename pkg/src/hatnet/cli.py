"""Command-line surface: describe, flops, forward, gradcheck, train-toy.

Exit codes: 0 success, 1 runtime or I/O failure (including a failed
gradient check), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from hatnet.tensor import (
    ConfigError,
    ContractError,
    DivisibilityError,
    NumericError,
    ShapeError,
    Tensor,
)
from hatnet.network import (
    GRID_SCHEDULES,
    ModelConfig,
    StageConfig,
    VARIANT_NAMES,
    build_model,
    forward,
    gradcheck_config,
    named_config,
    stage_spatial_sizes,
)
from hatnet.analysis import CostReport, cost_rows, count_params
from hatnet.weights import NameMismatchError, ShapeMismatchError, WeightsError, load_weights
from hatnet.train import run_gradcheck, train_toy

__all__ = ["RunConfig", "main", "cmd_describe", "cmd_flops", "cmd_forward", "cmd_gradcheck", "cmd_train_toy", "config_from_json"]


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI invocation depends on; identical RunConfig, identical output."""

    command: str
    variant: Optional[str] = None
    config_path: Optional[str] = None
    input_size: int = 224
    seed: int = 0
    grids: str = "classification"
    steps: int = 2000
    batch: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.05
    out: Optional[str] = None
    metrics: Optional[str] = None
    weights: Optional[str] = None
    eps: float = 1e-5
    tol: float = 1e-3
    coords: int = 200
    csv: Optional[str] = None
    figure: Optional[str] = None


_CONFIG_KEYS = {
    "stem_channels",
    "channels",
    "blocks",
    "dw_kernels",
    "expansions",
    "head_dim",
    "num_classes",
    "activation",
    "g1",
    "g2",
    "attention_kinds",
}


def config_from_json(path, grids: str = "classification") -> ModelConfig:
    """Custom model config from a JSON document; unknown keys are rejected."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be an object, got {type(doc).__name__}")
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}; allowed: {sorted(_CONFIG_KEYS)}")
    for key in ("stem_channels", "channels", "blocks", "head_dim"):
        if key not in doc:
            raise ConfigError(f"config is missing required key {key!r}")

    def four(key, default):
        value = doc.get(key, default)
        if not isinstance(value, (list, tuple)) or len(value) != 4:
            raise ConfigError(f"{key} must list one value per stage (4), got {value!r}")
        return tuple(value)

    schedule = GRID_SCHEDULES[grids]
    g1 = doc.get("g1", [g for g, _ in schedule])
    g2 = doc.get("g2", [g for _, g in schedule])
    if len(g1) != 3 or len(g2) != 3:
        raise ConfigError("g1 and g2 name the three hierarchical stages (3 values each)")
    kinds = four("attention_kinds", ("hierarchical",) * 3 + ("dense",))
    channels = four("channels", None)
    blocks = four("blocks", None)
    dw = four("dw_kernels", (3, 3, 3, 3))
    exp = four("expansions", (4, 4, 4, 4))
    stages = []
    for i in range(4):
        hier = kinds[i] == "hierarchical"
        stages.append(
            StageConfig(
                channels=int(channels[i]),
                blocks=int(blocks[i]),
                dw_kernel=int(dw[i]),
                expansion=int(exp[i]),
                g1=int(g1[i]) if hier and i < 3 else 1,
                g2=int(g2[i]) if hier and i < 3 else 1,
                attention_kind=str(kinds[i]),
            )
        )
    return ModelConfig(
        stem_channels=tuple(doc["stem_channels"]),
        stages=tuple(stages),
        head_dim=int(doc["head_dim"]),
        num_classes=int(doc.get("num_classes", 1000)),
        activation=str(doc.get("activation", "silu")),
    )


def _resolve_config(rc: RunConfig) -> ModelConfig:
    if rc.variant is not None:
        return named_config(rc.variant, rc.grids)
    if rc.config_path is not None:
        return config_from_json(rc.config_path, rc.grids)
    raise ConfigError("provide --variant or --config")


def _millions(n: int) -> str:
    return f"{n / 1e6:.1f}M"


def cmd_describe(rc: RunConfig) -> int:
    cfg = _resolve_config(rc)
    label = rc.variant if rc.variant is not None else rc.config_path
    print(f"model: {label}")
    print(
        f"stem channels: {cfg.stem_channels[0]}, {cfg.stem_channels[1]} | head_dim: {cfg.head_dim} "
        f"| activation: {cfg.activation} | classes: {cfg.num_classes}"
    )
    sizes = stage_spatial_sizes(cfg, rc.input_size, rc.input_size)
    print(f"{'stage':<7} {'map':>9} {'C':>5} {'L':>3} {'K':>3} {'E':>3} {'g1':>4} {'g2':>4}  kind")
    for name, stage, (h, w) in zip(("stage2", "stage3", "stage4", "stage5"), cfg.stages, sizes):
        g1 = stage.g1 if stage.attention_kind == "hierarchical" else "-"
        g2 = stage.g2 if stage.attention_kind == "hierarchical" else "-"
        print(
            f"{name:<7} {f'{h}x{w}':>9} {stage.channels:>5} {stage.blocks:>3} {stage.dw_kernel:>3} "
            f"{stage.expansion:>3} {g1!s:>4} {g2!s:>4}  {stage.attention_kind}"
        )
    total = count_params(cfg)
    print(f"params: {total:,} ({_millions(total)})")
    return 0


def cmd_flops(rc: RunConfig) -> int:
    cfg = _resolve_config(rc)
    rows = cost_rows(cfg, rc.input_size, rc.input_size)
    report = CostReport(input_h=rc.input_size, input_w=rc.input_size, batch=1, rows=rows)
    csv_text = report.to_csv()
    sys.stdout.write(csv_text)
    print(
        f"TOTAL at {rc.input_size}x{rc.input_size}: {report.total_flops} flops "
        f"({report.total_flops / 1e9:.3f}G), {report.total_params} params ({_millions(report.total_params)})"
    )
    figure = rc.figure
    if rc.csv is not None:
        Path(rc.csv).write_text(csv_text)
        if figure is None:
            figure = str(Path(rc.csv).with_suffix(".png"))
    if figure is not None:
        from hatnet.plots import save_cost_figure

        save_cost_figure(report, figure)
        print(f"figure written to {figure}")
    return 0


def cmd_forward(rc: RunConfig) -> int:
    cfg = _resolve_config(rc)
    if rc.weights is not None:
        model = load_weights(cfg, rc.weights)
    else:
        model = build_model(cfg, rc.seed)
    rng = np.random.default_rng(rc.seed)
    images = Tensor(rng.random((1, rc.input_size, rc.input_size, 3), dtype=np.float32))
    logits = forward(model, images)
    data = logits.data
    digest = hashlib.sha256(np.ascontiguousarray(data, dtype="<f4").tobytes()).hexdigest()
    print(f"logits shape: {tuple(data.shape)}")
    print(f"min {data.min():.6f} max {data.max():.6f} mean {data.mean():.6f}")
    print(f"sha256: {digest}")
    return 0


def cmd_gradcheck(rc: RunConfig) -> int:
    if rc.eps <= 0:
        raise ConfigError(f"--eps must be > 0, got {rc.eps}")
    if rc.tol <= 0:
        raise ConfigError(f"--tol must be > 0, got {rc.tol}")
    cfg = config_from_json(rc.config_path, rc.grids) if rc.config_path else gradcheck_config()
    total = count_params(cfg)
    if total > 100_000:
        raise ConfigError(f"gradcheck config has {total} parameters; the runtime bound is 100000")
    model = build_model(cfg, rc.seed)
    report = run_gradcheck(
        model, seed=rc.seed, h=rc.eps, num_coords=rc.coords, tol=rc.tol, input_size=rc.input_size
    )
    print(
        f"gradcheck: {report.num_coords} coordinates over {report.num_params} tensors "
        f"(64-bit, h={rc.eps:g})"
    )
    print(f"max relative error: {report.max_rel_err:.3e} at {report.worst_param}[{report.worst_index}]")
    if report.passed:
        print(f"PASS (tol {rc.tol:g})")
        return 0
    print(f"FAIL (tol {rc.tol:g})")
    return 1


def cmd_train_toy(rc: RunConfig) -> int:
    out = rc.out if rc.out is not None else "toy.weights"
    metrics = rc.metrics if rc.metrics is not None else "toy_metrics.csv"
    result = train_toy(
        steps=rc.steps,
        batch=rc.batch,
        lr=rc.lr,
        seed=rc.seed,
        weight_decay=rc.weight_decay,
        weights_path=out,
        metrics_path=metrics,
    )
    figure = rc.figure if rc.figure is not None else str(Path(metrics).with_suffix(".png"))
    if result.losses:
        from hatnet.plots import save_training_curves

        save_training_curves(result, figure)
    if result.rows:
        step, loss, acc = result.rows[-1]
        print(f"step {step}: loss {loss:.6f}, train_acc {acc:.6f} (10-step means)")
    else:
        print("no training steps run")
    print(f"metrics written to {metrics}; weights written to {out}")
    if result.losses:
        print(f"figure written to {figure}")
    return 0


_DISPATCH = {
    "describe": cmd_describe,
    "flops": cmd_flops,
    "forward": cmd_forward,
    "gradcheck": cmd_gradcheck,
    "train-toy": cmd_train_toy,
}


def _add_model_args(p: argparse.ArgumentParser, require_model: bool) -> None:
    group = p.add_mutually_exclusive_group(required=require_model)
    group.add_argument("--variant", choices=VARIANT_NAMES, help="stock model family member")
    group.add_argument("--config", dest="config_path", metavar="PATH", help="custom model config (JSON)")
    p.add_argument("--input-size", type=int, default=224, metavar="N")
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument(
        "--grids",
        choices=sorted(GRID_SCHEDULES),
        default="classification",
        help="grid schedule for the hierarchical stages",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hatnet",
        description="Hierarchical-attention backbone: audits, forwards, and toy training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="print a model's stage table and parameter count")
    _add_model_args(p, require_model=True)

    p = sub.add_parser("flops", help="per-layer parameter/FLOP report (CSV)")
    _add_model_args(p, require_model=True)
    p.add_argument("--csv", metavar="PATH", help="also write the CSV here (chart lands alongside)")
    p.add_argument("--figure", metavar="PATH", help="write the cost chart to this file")

    p = sub.add_parser("forward", help="run one seeded batch and print a logits summary")
    _add_model_args(p, require_model=True)
    p.add_argument("--weights", metavar="PATH", help="weights file to load instead of fresh init")

    p = sub.add_parser("gradcheck", help="verify taped gradients against central differences")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--config", dest="config_path", metavar="PATH", help="custom toy config (JSON)")
    p.add_argument("--input-size", type=int, default=16, metavar="N")
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument("--grids", choices=sorted(GRID_SCHEDULES), default="classification")
    p.add_argument("--eps", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--tol", type=float, default=1e-3, help="max acceptable relative error")
    p.add_argument("--coords", type=int, default=200, help="sampled coordinate count")

    p = sub.add_parser("train-toy", help="train the reduced model on the synthetic set")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument("--out", metavar="PATH", help="weights output (default toy.weights)")
    p.add_argument("--metrics", metavar="PATH", help="metrics CSV output (default toy_metrics.csv)")
    p.add_argument("--figure", metavar="PATH", help="training-curves figure (default alongside metrics)")
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    fields = {f for f in RunConfig.__dataclass_fields__}
    values = {k: v for k, v in vars(args).items() if k in fields and v is not None}
    return RunConfig(**values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    rc = _run_config(args)
    try:
        return _DISPATCH[rc.command](rc)
    except (NameMismatchError, ShapeMismatchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, ContractError, DivisibilityError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (WeightsError, NumericError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
