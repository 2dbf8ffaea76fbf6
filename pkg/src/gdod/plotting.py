"""Matplotlib figures for run reports, comparison tables and descent traces.

Everything renders off-screen (Agg) straight to PNG files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Without this the PNG embeds the matplotlib version string.
_PNG_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_curves(reports, path, metric="test_auc"):
    """Mean test metric per epoch with a one-std band, one panel per task."""
    usable = [r for r in reports if "curves" in r["summary"]]
    if not usable:
        return None
    n_tasks = usable[0]["n_tasks"]
    fig, axes = plt.subplots(1, n_tasks, figsize=(4.2 * n_tasks, 3.4), squeeze=False)
    for r in usable:
        mean = np.array(r["summary"]["curves"][metric + "_mean"])
        std = np.array(r["summary"]["curves"][metric + "_std"])
        epochs = np.arange(mean.shape[0])
        for k, ax in enumerate(axes[0]):
            line, = ax.plot(epochs, mean[:, k], marker="o", ms=3, label=r["label"])
            ax.fill_between(epochs, mean[:, k] - std[:, k], mean[:, k] + std[:, k], color=line.get_color(), alpha=0.15)
    name = "AUC" if metric == "test_auc" else "Logloss"
    for k, ax in enumerate(axes[0]):
        ax.set_title(f"task {k}")
        ax.set_xlabel("epoch")
        ax.set_ylabel(f"test {name}")
        ax.grid(alpha=0.3)
    axes[0][-1].legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_compare(rows, path):
    """Grouped bars of the AUC gain over the baseline, per task."""
    tasks = sorted({key[:-5] for key in rows[0] if key.endswith("_gain")})
    x = np.arange(len(tasks))
    width = 0.8 / len(rows)
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(tasks) * len(rows) ** 0.5, 3.4))
    for j, row in enumerate(rows):
        gains = [row[f"{t}_gain"] if row[f"{t}_gain"] is not None else np.nan for t in tasks]
        ax.bar(x + (j - (len(rows) - 1) / 2) * width, gains, width, label=row["method"])
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(tasks)
    ax.set_ylabel("AUC gain over baseline")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_descent(traces, path):
    """Total loss and ``||sum g^sh||^2`` per step for one or more descent traces."""
    fig, (ax_loss, ax_norm) = plt.subplots(1, 2, figsize=(8.4, 3.4))
    for label, trace in traces:
        ax_loss.plot(trace.losses, lw=1, label=str(label))
        sq = np.asarray(trace.shared_sq_norms)
        ax_norm.semilogy(np.arange(1, sq.size + 1), np.maximum(sq, 1e-300), lw=1)
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("total loss")
    ax_norm.set_xlabel("step")
    ax_norm.set_ylabel("squared norm of shared update")
    for ax in (ax_loss, ax_norm):
        ax.grid(alpha=0.3)
    if len(traces) <= 10:
        ax_loss.legend(fontsize=7, title="seed")
    fig.tight_layout()
    return _save(fig, path)
