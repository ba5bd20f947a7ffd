"""Figure rendering for run reports.

Every report command writes delimited tables; the functions here render
the companion PNGs from the same data. All rendering uses the Agg backend
and writes to files, never to a display.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .mixup import mix_ratio

_MODE_STYLE = {"off": "tab:gray", "vanilla": "tab:blue", "lh": "tab:red"}


def _finish(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_ratio_curves(alphas, betas, path) -> None:
    """Mixing ratio versus similarity: one panel per swept parameter."""
    s = np.linspace(0.0, 1.0, 201)
    fig, (ax_a, ax_b) = plt.subplots(1, 2, figsize=(9, 3.6))
    for alpha in alphas:
        ax_a.plot(s, [mix_ratio(v, alpha, 1.0) for v in s], label=f"alpha={alpha:g}")
    ax_a.set_title("beta = 1")
    for beta in betas:
        ax_b.plot(s, [mix_ratio(v, 1.0, beta) for v in s], label=f"beta={beta:g}")
    ax_b.set_title("alpha = 1")
    for ax in (ax_a, ax_b):
        ax.set_xlabel("similarity s")
        ax.set_ylabel("mix ratio lambda")
        ax.set_ylim(0.45, 1.05)
        ax.legend(fontsize=7)
    _finish(fig, path)


def save_training_curves(log_rows: list[dict], path) -> None:
    """Loss and dev Macro-F1 per epoch; warmup epochs have no dev score."""
    epochs = [r["epoch"] for r in log_rows]
    fig, (ax_l, ax_f) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax_l.plot(epochs, [r["train_loss"] for r in log_rows], label="supervised")
    ax_l.plot(epochs, [r["mixed_loss"] for r in log_rows], label="mixed")
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("loss")
    ax_l.legend()
    evaluated = [(r["epoch"], r["dev_macro_f1"]) for r in log_rows if r["dev_macro_f1"] is not None]
    if evaluated:
        ax_f.plot([e for e, _ in evaluated], [v for _, v in evaluated], marker="o")
    ax_f.set_xlabel("epoch")
    ax_f.set_ylabel("dev Macro-F1")
    ax_f.set_ylim(0.0, 1.0)
    _finish(fig, path)


def save_sweep_figure(rows: list[dict], path) -> None:
    """Test metrics against the swept ratio-law parameter."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for ax, axis_name, x_key in ((axes[0], "alpha", "alpha"), (axes[1], "beta", "beta")):
        subset = sorted(
            (r for r in rows if r["axis"] in (axis_name, "grid")),
            key=lambda r: r[x_key],
        )
        if not subset:
            ax.set_visible(False)
            continue
        xs = [r[x_key] for r in subset]
        ax.plot(xs, [r["macro_f1"] for r in subset], marker="o", label="Macro-F1")
        ax.plot(xs, [r["micro_f1"] for r in subset], marker="s", label="Micro-F1")
        if axis_name == "alpha":
            ax.set_xscale("log")
        ax.set_xlabel(axis_name)
        ax.set_ylabel("F1")
        ax.legend()
    _finish(fig, path)


def save_sparse_figure(rows: list[dict], path) -> None:
    """Metrics against the training downsample ratio, one line per mode."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for ax, metric in ((axes[0], "micro_f1"), (axes[1], "macro_f1")):
        for mode, color in _MODE_STYLE.items():
            subset = sorted((r for r in rows if r["mode"] == mode), key=lambda r: r["ratio"])
            if not subset:
                continue
            ax.plot(
                [r["ratio"] for r in subset],
                [r[metric] for r in subset],
                marker="o",
                color=color,
                label=mode,
            )
        ax.set_xlabel("train ratio")
        ax.set_ylabel(metric)
        ax.legend()
    _finish(fig, path)


def save_ablation_figure(summary_rows: list[dict], path) -> None:
    """Mean test metrics per mode with std error bars."""
    modes = [r["mode"] for r in summary_rows]
    x = np.arange(len(modes))
    width = 0.38
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.bar(
        x - width / 2,
        [r["micro_mean"] for r in summary_rows],
        width,
        yerr=[r["micro_std"] for r in summary_rows],
        label="Micro-F1",
        capsize=3,
    )
    ax.bar(
        x + width / 2,
        [r["macro_mean"] for r in summary_rows],
        width,
        yerr=[r["macro_std"] for r in summary_rows],
        label="Macro-F1",
        capsize=3,
    )
    ax.set_xticks(x, modes)
    ax.set_ylabel("F1")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    _finish(fig, path)


def save_breakdown_figure(depth_rows: list[dict], bucket_rows: list[dict], path) -> None:
    """Per-depth and per-frequency-bucket metric bars."""
    fig, (ax_d, ax_b) = plt.subplots(1, 2, figsize=(9, 3.6))
    if depth_rows:
        x = np.arange(len(depth_rows))
        width = 0.38
        ax_d.bar(x - width / 2, [r["micro_f1"] for r in depth_rows], width, label="Micro-F1")
        ax_d.bar(x + width / 2, [r["macro_f1"] for r in depth_rows], width, label="Macro-F1")
        ax_d.set_xticks(x, [f"d{r['depth']}" for r in depth_rows])
        ax_d.set_ylabel("F1")
        ax_d.set_ylim(0.0, 1.05)
        ax_d.legend()
    if bucket_rows:
        x = np.arange(len(bucket_rows))
        ax_b.bar(x, [r["macro_f1"] for r in bucket_rows], 0.6, color="tab:purple")
        ax_b.set_xticks(x, [f"b{r['bucket']}\n({r['n_labels']})" for r in bucket_rows])
        ax_b.set_ylabel("Macro-F1")
        ax_b.set_ylim(0.0, 1.05)
    else:
        ax_b.set_visible(False)
    _finish(fig, path)
