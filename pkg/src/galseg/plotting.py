"""Figures written next to the tab-delimited reports."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "figure.dpi": 100,
    "font.size": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "galseg",
})

# no timestamps or version strings, so reruns produce identical bytes
_PNG_META = {"Software": None}


def _save(fig, path: str | os.PathLike) -> None:
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def plot_loss(losses, path, title: str = "training loss") -> None:
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(np.arange(1, len(losses) + 1), losses, color="k", lw=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean cross-entropy")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_report(report, path, title: str = "per-fold metrics") -> None:
    rows = np.array([r.as_tuple() for r in report.rows])
    keys = ("Pre", "Rec", "Acc", "Fsc", "IoU")
    n = len(rows)
    width = 0.8 / len(keys)
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * n + 2), 3))
    for j, key in enumerate(keys):
        ax.bar(np.arange(n) + (j - 2) * width, rows[:, j], width, label=key)
    ax.set_xticks(np.arange(n))
    ax.set_xlabel("fold")
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    ax.legend(ncol=5, fontsize=6, loc="lower center")
    fig.tight_layout()
    _save(fig, path)


def plot_bench(seeds, iou_gal, iou_base, path) -> None:
    fig, ax = plt.subplots(figsize=(4, 3))
    x = np.arange(len(seeds))
    for i in x:
        ax.plot([i, i], [iou_base[i], iou_gal[i]], color="0.7", lw=1)
    ax.scatter(x, iou_base, marker="o", color="tab:blue", label="no GAL")
    ax.scatter(x, iou_gal, marker="s", color="tab:red", label="with GAL")
    ax.set_xticks(x)
    ax.set_xticklabels([str(s) for s in seeds])
    ax.set_xlabel("seed")
    ax.set_ylabel("mIoU")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def plot_activation_maps(panels: dict[str, np.ndarray], path) -> None:
    """One grayscale panel per named map, in insertion order."""
    fig, axes = plt.subplots(1, len(panels), figsize=(2 * len(panels), 2.2), squeeze=False)
    for ax, (name, img) in zip(axes[0], panels.items()):
        ax.imshow(img, cmap="gray", vmin=0, vmax=255, interpolation="nearest")
        ax.set_title(name, fontsize=7)
        ax.set_axis_off()
    fig.tight_layout()
    _save(fig, path)
