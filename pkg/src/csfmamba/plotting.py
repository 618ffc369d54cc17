"""Figure helpers for the report paths. Everything renders to files via Agg."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def new_figure(width=5.0, height=None, **kw):
    golden = (np.sqrt(5) - 1.0) / 2.0
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(width, height or width * golden), **kw)
    return fig, ax


def save(fig, path, dpi=150):
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def plot_training_curves(history, path):
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(RC):
        fig, ax = new_figure()
        ax.plot(epochs, [r["train_loss"] for r in history], color="k", lw=1.2, label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        ax2 = ax.twinx()
        ax2.plot(epochs, [r["train_acc"] for r in history], color="tab:blue", lw=1, label="train acc")
        ax2.plot(epochs, [r["val_oa"] for r in history], color="tab:red", lw=1, label="val OA")
        ax2.set_ylim(0, 1.02)
        ax2.set_ylabel("accuracy")
        lines = ax.get_lines() + ax2.get_lines()
        ax.legend(lines, [l.get_label() for l in lines], loc="center right", frameon=False)
        save(fig, path)


def plot_confusion(cm, path, title=None):
    cm = np.asarray(cm)
    K = cm.shape[0]
    rows = cm.sum(axis=1, keepdims=True)
    frac = cm / np.where(rows == 0, 1, rows)
    with plt.rc_context(RC):
        fig, ax = new_figure(width=0.45 * K + 2.5, height=0.45 * K + 2.0)
        im = ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
        ticks = np.arange(K)
        ax.set_xticks(ticks, [str(k + 1) for k in ticks])
        ax.set_yticks(ticks, [str(k + 1) for k in ticks])
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        if K <= 20:
            for i in range(K):
                for j in range(K):
                    if cm[i, j]:
                        ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=6,
                                color="w" if frac[i, j] > 0.5 else "k")
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        save(fig, path)


def plot_scan_bench(rows, path):
    L = [r["length"] for r in rows]
    with plt.rc_context(RC):
        fig, ax = new_figure()
        ax.loglog(L, [r["scan_s"] for r in rows], "o-", color="k", label="selective scan")
        if all(r.get("oracle_s") is not None for r in rows):
            ax.loglog(L, [r["oracle_s"] for r in rows], "s--", color="tab:red", label="materialized oracle")
        ax.set_xlabel("sequence length L")
        ax.set_ylabel("wall-clock per scan (s)")
        ax.legend(frameon=False)
        save(fig, path)
