"""Figure rendering for run and comparison outputs.

Figures are written next to the CSVs they visualize. Display curves use
a 30-event trailing-window average; the CSVs always keep the raw values.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

SMOOTH_WINDOW = 30


def smooth(values: np.ndarray, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Trailing moving average; shorter windows at the start of the series."""
    x = np.asarray(values, dtype=np.float64)
    if len(x) == 0:
        return x
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def _series(result, column):
    vals = [getattr(row, column) for row in result.rows]
    if not vals or any(v is None for v in vals):
        return None
    return np.array(vals, dtype=np.float64)


def render_run_figure(results, path, policy: str = "") -> None:
    """2x2 panel: cumulative reward, labelled entropy, loss, accuracy proxy."""
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    panels = [
        ("cumulative_reward", "cumulative reward", False),
        ("histogram_entropy", "labelled-set entropy (nats)", False),
        ("dqn_loss", "training loss (smoothed)", True),
        ("simulated_mean_iou", "simulated mean IoU", False),
    ]
    for ax, (col, label, smoothed) in zip(axes.ravel(), panels):
        drew = False
        for r in results:
            series = _series(r, col)
            if series is None:
                continue
            y = smooth(series) if smoothed else series
            ax.plot(np.arange(len(y)), y, lw=1.0, label=f"seed {r.seed}")
            drew = True
        if col == "simulated_mean_iou" and not drew:
            for r in results:
                series = _series(r, "labelled_count")
                if series is not None:
                    ax.plot(np.arange(len(series)), series, lw=1.0, label=f"seed {r.seed}")
            label = "labelled patches"
        ax.set_xlabel("selection event")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    if results and results[0].pretrain_rows:
        # overlay the pretraining acquisition staircase on the reward panel
        ax = axes.ravel()[0]
        pr = results[0].pretrain_rows
        cum = np.cumsum([row.event_reward for row in pr])
        ax.plot(np.arange(len(cum)) - len(cum), cum, lw=1.0, ls="--", color="tab:red",
                label="pretraining (seed %d)" % results[0].seed)
    axes.ravel()[0].legend(fontsize=7)
    fig.suptitle(f"policy: {policy}" if policy else "")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_compare_figure(curves: dict, path) -> None:
    """Mean +/- std cumulative-reward band per policy over shared seeds."""
    fig, ax = plt.subplots(figsize=(7, 5))
    for name, runs in curves.items():
        if not runs:
            continue
        n = min(len(c) for c in runs)
        stack = np.stack([c[:n] for c in runs])
        mean = stack.mean(axis=0)
        std = stack.std(axis=0)
        xs = np.arange(n)
        ax.plot(xs, mean, lw=1.4, label=name)
        ax.fill_between(xs, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("selection event")
    ax.set_ylabel("cumulative reward")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_thought_experiment(curve_sets: dict, path) -> None:
    """Uniform-vs-proportional accuracy curves for several imbalance levels."""
    fig, ax = plt.subplots(figsize=(7, 5))
    for label, (uniform, random_) in curve_sets.items():
        xs = np.arange(1, len(uniform) + 1)
        line, = ax.plot(xs, uniform, lw=1.4, label=f"{label} uniform")
        ax.plot(xs, random_, lw=1.4, ls="--", color=line.get_color(),
                label=f"{label} proportional")
    ax.set_xlabel("acquisition step")
    ax.set_ylabel("simulated mean IoU")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
