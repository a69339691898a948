"""Matplotlib figures for experiment outputs, rendered off-screen to PNG."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no software/version text so identical data gives identical bytes
_PNG_META = {"Software": None}


def _save(fig, path, manifest_hash: str) -> None:
    fig.savefig(path, dpi=100, metadata={**_PNG_META, "Comment": f"manifest {manifest_hash}"})
    plt.close(fig)


def loss_curves(traces: dict, path, manifest_hash: str) -> None:
    """One panel per metric id; ``traces`` maps ``(metric_id, kind)`` to a list of per-epoch losses."""
    metrics = sorted({m for m, _ in traces})
    kinds = sorted({k for _, k in traces})
    cols = min(3, len(metrics))
    rows = int(np.ceil(len(metrics) / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3 * rows), squeeze=False)
    for ax, metric in zip(axes.flat, metrics):
        for kind in kinds:
            trace = traces.get((metric, kind))
            if trace:
                ax.semilogy(np.arange(1, len(trace) + 1), trace, label=kind)
        ax.set_title(metric)
        ax.set_xlabel("epoch")
        ax.set_ylabel("train MSE")
    for ax in list(axes.flat)[len(metrics):]:
        ax.set_visible(False)
    axes.flat[0].legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path, manifest_hash)


def mse_grid(grid: dict, metrics, kinds, path, manifest_hash: str) -> None:
    """Grouped bars of test MSE on a log axis; ``grid`` maps ``(metric_id, kind)`` to a value."""
    fig, ax = plt.subplots(figsize=(1.2 * len(metrics) + 2, 3.5))
    width = 0.8 / max(len(kinds), 1)
    x = np.arange(len(metrics))
    for j, kind in enumerate(kinds):
        vals = [grid.get((m, kind), np.nan) for m in metrics]
        ax.bar(x + (j - (len(kinds) - 1) / 2) * width, vals, width, label=kind)
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(metrics)
    ax.set_ylabel("test MSE")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path, manifest_hash)


def accuracy_bars(rows, path, manifest_hash: str) -> None:
    """Mean test accuracy with one standard deviation per similarity space."""
    fig, ax = plt.subplots(figsize=(1.5 * len(rows) + 2, 3.5))
    names = [r["similarity_space"] for r in rows]
    ax.bar(np.arange(len(rows)), [r["mean_accuracy"] for r in rows],
           yerr=[r["std_accuracy"] for r in rows], capsize=4)
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(names, fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("test accuracy")
    fig.tight_layout()
    _save(fig, path, manifest_hash)


def embedding_scatter(coords: np.ndarray, path, manifest_hash: str) -> None:
    """First two embedding coordinates, nodes labelled by index."""
    fig, ax = plt.subplots(figsize=(4, 4))
    xy = np.zeros((coords.shape[0], 2))
    xy[:, : min(2, coords.shape[1])] = coords[:, :2]
    ax.scatter(xy[:, 0], xy[:, 1])
    for i, (u, v) in enumerate(xy):
        ax.annotate(str(i), (u, v), fontsize=8)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    _save(fig, path, manifest_hash)
