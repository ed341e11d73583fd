"""Matplotlib figures for the CLI reports. Always renders off-screen."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps reruns byte-identical
_META = {"Software": None}


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """False/true positive rates swept over every distinct score, ties grouped."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y == 1)[last]
    fp = np.cumsum(y == 0)[last]
    P, N = max(int((y == 1).sum()), 1), max(int((y == 0).sum()), 1)
    return np.r_[0.0, fp / N], np.r_[0.0, tp / P]


def save_analysis_panel(maps: dict[str, np.ndarray], path) -> None:
    fig, axes = plt.subplots(1, len(maps), figsize=(3 * len(maps), 3.2))
    for ax, (title, img) in zip(np.atleast_1d(axes), maps.items()):
        ax.imshow(img, cmap="gray", vmin=0, vmax=255, interpolation="nearest")
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def save_training_curves(rows: list[list[str]], path) -> None:
    """``rows`` as written to the metrics CSV: epoch, split, loss, ce, sc, acc, auc."""
    fig, (ax_l, ax_m) = plt.subplots(1, 2, figsize=(9, 3.5))
    for split, style in (("train", "-"), ("val", "--")):
        sel = [r for r in rows if r[1] == split]
        ep = [int(r[0]) for r in sel]
        ax_l.plot(ep, [float(r[2]) for r in sel], style, label=f"{split} loss")
        ax_m.plot(ep, [float(r[5]) for r in sel], style, label=f"{split} ACC")
        ax_m.plot(ep, [float(r[6]) for r in sel], style, label=f"{split} AUC")
    ax_l.set_xlabel("epoch")
    ax_m.set_xlabel("epoch")
    ax_m.set_ylim(0, 1.02)
    ax_l.legend(fontsize=8)
    ax_m.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def save_roc(scores, labels, path, title: str = "") -> None:
    fpr, tpr = roc_curve(scores, labels)
    fig, ax = plt.subplots(figsize=(3.6, 3.6))
    ax.plot(fpr, tpr)
    ax.plot([0, 1], [0, 1], ":", color="gray")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
