"""Toy-scale training and gradient verification.

The optimizer is Adam with decoupled weight decay: the decay term is
applied directly to the parameter, outside the adaptive update, and
only to matrices (norm gains/shifts and biases are exempt). A constant
learning rate is enough at these step counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hatnet.tensor import (
    ContractError,
    GradTape,
    Tensor,
    backward,
    central_difference,
    cross_entropy_logits,
    finite_checks,
)
from hatnet.network import Model, build_model, forward, toy_config
from hatnet.data import synth_batch
from hatnet.weights import save_weights

__all__ = ["AdamW", "TrainResult", "train_toy", "GradcheckReport", "run_gradcheck", "TOY_INPUT_SIZE"]

TOY_INPUT_SIZE = 32
LOG_EVERY = 10


class AdamW:
    """Adam with decoupled weight decay on tensors of rank >= 2."""

    def __init__(
        self,
        params: dict,
        lr: float,
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.05,
    ):
        if lr <= 0:
            raise ContractError(f"learning rate must be > 0, got {lr}")
        if weight_decay < 0:
            raise ContractError(f"weight decay must be >= 0, got {weight_decay}")
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m = {n: np.zeros(p.shape, dtype=p.dtype) for n, p in params.items()}
        self._v = {n: np.zeros(p.shape, dtype=p.dtype) for n, p in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            g = g.data if isinstance(g, Tensor) else g
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and p.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update


@dataclass
class TrainResult:
    steps: int
    losses: list = field(default_factory=list)  # one entry per step
    accs: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # (step, windowed loss, windowed acc)
    model: Optional[Model] = None

    @property
    def final_loss(self) -> Optional[float]:
        return self.rows[-1][1] if self.rows else None

    @property
    def final_acc(self) -> Optional[float]:
        return self.rows[-1][2] if self.rows else None


def _grads_by_name(model: Model, grad_map: dict) -> dict:
    return {name: grad_map[t] for name, t in model.params.items()}


def train_toy(
    steps: int,
    batch: int,
    lr: float,
    seed: int = 0,
    weight_decay: float = 0.05,
    num_classes: int = 3,
    weights_path=None,
    metrics_path=None,
) -> TrainResult:
    """Train the reduced model on the synthetic stream; fresh batch every step.

    Metrics rows land every 10 steps and average the trailing 10 steps,
    formatted to six decimals so equal runs produce equal bytes. When
    paths are given, the metrics CSV and final weights are written.
    """
    if steps < 0:
        raise ContractError(f"steps must be >= 0, got {steps}")
    metrics_fh = open(metrics_path, "w", newline="") if metrics_path is not None else None
    try:
        if metrics_fh is not None:
            metrics_fh.write("step,loss,train_acc\n")
        cfg = toy_config(num_classes)
        model = build_model(cfg, seed)
        opt = AdamW(model.params, lr=lr, weight_decay=weight_decay)
        result = TrainResult(steps=steps, model=model)
        with finite_checks(True):
            for step in range(1, steps + 1):
                images, labels = synth_batch(seed, (step - 1) * batch, batch, num_classes, TOY_INPUT_SIZE)
                with GradTape() as tape:
                    tape.watch(*model.params.values())
                    logits = forward(model, images)
                    loss = cross_entropy_logits(logits, labels)
                grad_map = backward(loss, tape)
                opt.step(_grads_by_name(model, grad_map))
                result.losses.append(loss.item())
                result.accs.append(float(np.mean(np.argmax(logits.data, axis=-1) == labels)))
                if step % LOG_EVERY == 0:
                    w_loss = float(np.mean(result.losses[-LOG_EVERY:]))
                    w_acc = float(np.mean(result.accs[-LOG_EVERY:]))
                    result.rows.append((step, w_loss, w_acc))
                    if metrics_fh is not None:
                        metrics_fh.write(f"{step},{w_loss:.6f},{w_acc:.6f}\n")
        if weights_path is not None:
            save_weights(model, weights_path)
        return result
    finally:
        if metrics_fh is not None:
            metrics_fh.close()


# --------------------------------------------------------------------------
# Gradient checking
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GradcheckReport:
    max_rel_err: float
    worst_param: str
    worst_index: int
    num_coords: int
    num_params: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def _rel_err(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def run_gradcheck(
    model: Model,
    seed: int = 0,
    h: float = 1e-5,
    num_coords: int = 200,
    tol: float = 1e-3,
    input_size: int = 16,
    corrupt: Optional[str] = None,
) -> GradcheckReport:
    """Compare taped gradients against central differences, in 64-bit.

    At least one coordinate of every parameter tensor is sampled; the
    remainder are drawn proportionally to tensor size. `corrupt` names a
    parameter whose analytic gradient is deliberately offset, for
    negative-control tests.
    """
    if h <= 0:
        raise ContractError(f"finite-difference step must be > 0, got {h}")
    if tol <= 0:
        raise ContractError(f"tolerance must be > 0, got {tol}")
    m64 = model.astype(np.float64)
    rng = np.random.default_rng(seed)
    images = Tensor(rng.standard_normal((1, input_size, input_size, 3)), dtype=np.float64)
    label = np.array([int(rng.integers(0, model.config.num_classes))])

    def loss_value() -> float:
        return cross_entropy_logits(forward(m64, images), label).item()

    with finite_checks(True):
        with GradTape() as tape:
            tape.watch(*m64.params.values())
            loss = cross_entropy_logits(forward(m64, images), label)
        grad_map = backward(loss, tape)
        analytic = {name: grad_map[t].data for name, t in m64.params.items()}
        if corrupt is not None:
            if corrupt not in analytic:
                raise ContractError(f"unknown parameter {corrupt!r}")
            analytic[corrupt] = analytic[corrupt] + 1.0

        names = list(m64.params)
        coords = [(n, int(rng.integers(0, m64.params[n].size))) for n in names]
        sizes = np.array([m64.params[n].size for n in names], dtype=np.int64)
        cum = np.cumsum(sizes)
        total = int(cum[-1])
        while len(coords) < num_coords:
            flat = int(rng.integers(0, total))
            pi = int(np.searchsorted(cum, flat, side="right"))
            offset = flat - (0 if pi == 0 else int(cum[pi - 1]))
            coords.append((names[pi], offset))

        worst = (0.0, names[0], 0)
        for name, idx in coords:
            numeric = central_difference(lambda _: loss_value(), m64.params[name].data, idx, h)
            err = _rel_err(float(analytic[name].reshape(-1)[idx]), numeric)
            if err > worst[0]:
                worst = (err, name, idx)
    return GradcheckReport(
        max_rel_err=worst[0],
        worst_param=worst[1],
        worst_index=worst[2],
        num_coords=len(coords),
        num_params=len(m64.params),
        tol=tol,
    )
