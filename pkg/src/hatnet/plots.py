"""Figure rendering for the report-producing CLI commands."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["save_cost_figure", "save_training_curves"]

_GROUPS = ("stem", "stage2", "stage3", "stage4", "stage5", "head")


def _group_totals(rows) -> dict:
    totals = {g: [0, 0] for g in _GROUPS}
    for r in rows:
        group = r.name.split(".", 1)[0]
        if group in totals:
            totals[group][0] += r.params
            totals[group][1] += r.flops
    return totals


def save_cost_figure(report, path) -> None:
    """Bar chart of per-group parameters and FLOPs for a CostReport."""
    totals = _group_totals(report.rows)
    labels = list(totals)
    params = [totals[g][0] / 1e6 for g in labels]
    flops = [totals[g][1] / 1e9 for g in labels]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.bar(labels, flops, color="#4878cf")
    ax1.set_ylabel("GFLOPs")
    ax1.set_title(f"compute at {report.input_h}x{report.input_w}")
    ax2.bar(labels, params, color="#6acc65")
    ax2.set_ylabel("params (M)")
    ax2.set_title("parameters")
    for ax in (ax1, ax2):
        ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_training_curves(result, path) -> None:
    """Loss and accuracy curves for a TrainResult."""
    steps = list(range(1, len(result.losses) + 1))
    row_steps = [r[0] for r in result.rows]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.plot(steps, result.losses, lw=0.6, alpha=0.45, color="#4878cf", label="per step")
    if result.rows:
        ax1.plot(row_steps, [r[1] for r in result.rows], lw=1.6, color="#d65f5f", label="10-step mean")
    ax1.set_xlabel("step")
    ax1.set_ylabel("cross-entropy")
    ax1.legend(frameon=False)
    ax2.plot(steps, result.accs, lw=0.6, alpha=0.45, color="#4878cf")
    if result.rows:
        ax2.plot(row_steps, [r[2] for r in result.rows], lw=1.6, color="#d65f5f")
    ax2.set_xlabel("step")
    ax2.set_ylabel("train accuracy")
    ax2.set_ylim(0.0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
