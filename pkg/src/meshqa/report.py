"""Matplotlib figures written next to the CSV outputs of train / eval / crossval."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import logistic4  # noqa: E402


def plot_loss_curves(rows: list[dict], path) -> Path:
    epochs = [r["epoch"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key, label in (("l", "total"), ("l_mae", "MAE"), ("l_rank", "rank")):
        ax.plot(epochs, [r[key] for r in rows], marker="o", ms=3, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_scatter(pred, mos, path, params=None, title: str = "") -> Path:
    pred, mos = np.asarray(pred, float), np.asarray(mos, float)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.scatter(pred, mos, s=18)
    if params is not None and pred.size:
        xs = np.linspace(pred.min(), pred.max(), 200)
        ax.plot(xs, logistic4(xs, *params), color="C1", label="logistic fit")
        ax.legend()
    ax.set_xlabel("predicted score")
    ax.set_ylabel("MOS")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_folds(srcc_values, plcc_values, path) -> Path:
    k = len(srcc_values)
    x = np.arange(k)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(x - 0.2, srcc_values, width=0.4, label="SRCC")
    ax.bar(x + 0.2, plcc_values, width=0.4, label="PLCC")
    ax.axhline(float(np.median(srcc_values)), color="C0", ls="--", lw=1)
    ax.axhline(float(np.median(plcc_values)), color="C1", ls="--", lw=1)
    ax.set_xticks(x, [f"fold {i}" for i in range(k)])
    ax.set_ylim(min(0.0, min(list(srcc_values) + list(plcc_values))), 1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
