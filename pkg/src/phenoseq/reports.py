"""Delimited report emission and companion matplotlib figures.

Every report path writes machine-readable CSV first; a PNG rendering of the
same data lands next to it.  Figures are a convenience view only -- nothing
downstream consumes them.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import RunHistory

COMPARISON_COLUMNS = (
    "model",
    "micro_auc",
    "macro_auc",
    "micro_f1",
    "macro_f1",
    "precision_at_10",
)


def write_comparison_csv(path: str, rows: list[dict], k: int = 10) -> None:
    """Model-comparison table, one row per model."""
    columns = list(COMPARISON_COLUMNS)
    columns[-1] = f"precision_at_{k}"
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            out = [row["model"]]
            for col in columns[1:]:
                v = row.get(col)
                out.append("" if v is None else repr(float(v)))
            writer.writerow(out)
    os.replace(tmp, path)


def write_trajectory_csv(path: str, trajectory: np.ndarray) -> None:
    """Per-step probabilities for one episode: t, label_id, probability."""
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "label_id", "probability"])
        for t in range(trajectory.shape[0]):
            for l in range(trajectory.shape[1]):
                writer.writerow([t, l, repr(float(trajectory[t, l]))])
    os.replace(tmp, path)


def render_history_figure(path: str, history: RunHistory, title: str = "") -> None:
    """Learning curves: micro AUC and micro F1 by epoch, train vs validation."""
    epochs = [r.epoch for r in history.records]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    panels = (("micro_auc", "micro AUC"), ("micro_f1", "micro F1"))
    for ax, (metric, label) in zip(axes, panels):
        for prefix, style in (("train", "--"), ("val", "-")):
            vals = [getattr(r, f"{prefix}_{metric}") for r in history.records]
            ax.plot(epochs, vals, style, label=prefix)
        ax.set_xlabel("epoch")
        ax.set_ylabel(label)
        ax.legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_comparison_figure(path: str, rows: list[dict], k: int = 10) -> None:
    """Grouped bars: one group per metric, one bar per model."""
    metrics = ["micro_auc", "macro_auc", "micro_f1", "macro_f1", f"precision_at_{k}"]
    models = [row["model"] for row in rows]
    fig, ax = plt.subplots(figsize=(1.8 + 1.1 * len(metrics), 3.8))
    width = 0.8 / max(len(models), 1)
    xs = np.arange(len(metrics))
    for j, row in enumerate(rows):
        vals = [row.get(m) if row.get(m) is not None else 0.0 for m in metrics]
        ax.bar(xs + j * width, vals, width, label=models[j])
    ax.set_xticks(xs + width * (len(models) - 1) / 2)
    ax.set_xticklabels(metrics, fontsize=8)
    ax.set_ylim(0, 1)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_trajectory_figure(
    path: str, trajectory: np.ndarray, label_names: list[str] | None = None,
    max_lines: int = 8,
) -> None:
    """Per-step probability traces; only the highest-ending labels get a line."""
    T, L = trajectory.shape
    if label_names is None:
        label_names = [f"label_{l:03d}" for l in range(L)]
    top = np.argsort(-trajectory[-1])[:max_lines]
    fig, ax = plt.subplots(figsize=(7, 3.8))
    for l in top:
        ax.plot(range(T), trajectory[:, l], label=label_names[l])
    ax.set_xlabel("hour")
    ax.set_ylabel("probability")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_per_label_figure(path: str, per_label: list[dict], max_rows: int = 20) -> None:
    """Horizontal bars of per-label F1 (already sorted descending)."""
    rows = per_label[:max_rows]
    names = [r["label"] for r in rows][::-1]
    f1s = [r["f1"] for r in rows][::-1]
    fig, ax = plt.subplots(figsize=(6, 0.3 * len(rows) + 1.2))
    ax.barh(range(len(rows)), f1s)
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(names, fontsize=7)
    ax.set_xlabel("F1")
    ax.set_xlim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
