"""Figures written next to the tab-separated reports."""

import textwrap

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "svg.hashsalt": "hiercnn",
}
# PNG metadata would otherwise carry the matplotlib version only; keep it fixed
_METADATA = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_METADATA)
    plt.close(fig)


def plot_history(history, path, title=""):
    """Training loss and validation F1 per epoch, best epoch marked."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.2))
        epochs = np.arange(1, len(history) + 1)
        ax.plot(epochs, history.train_loss, color="0.3", label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax2 = ax.twinx()
        ax2.plot(epochs, history.val_f1_micro, color="C0", label="val F1 micro")
        ax2.plot(epochs, history.val_f1_macro, color="C1", label="val F1 macro")
        ax2.set_ylim(0, 1)
        ax2.set_ylabel("F1")
        if history.best_epoch >= 0:
            ax2.axvline(history.best_epoch + 1, color="C2", ls=":", lw=1, label="checkpoint")
        lines = ax.get_legend_handles_labels()
        lines2 = ax2.get_legend_handles_labels()
        ax2.legend(lines[0] + lines2[0], lines[1] + lines2[1], loc="center right", frameon=False)
        if title:
            ax.set_title(title)
        _save(fig, path)


def plot_confusion(cm, path, title=""):
    with plt.rc_context(STYLE):
        n = len(cm.classes)
        fig, ax = plt.subplots(figsize=(1.2 + 0.45 * n, 1.0 + 0.45 * n))
        rows = cm.counts.sum(axis=1, keepdims=True)
        frac = np.divide(cm.counts, rows, out=np.zeros(cm.counts.shape), where=rows > 0)
        ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
        for i in range(n):
            for j in range(n):
                if cm.counts[i, j]:
                    ax.text(j, i, str(int(cm.counts[i, j])), ha="center", va="center", fontsize=7,
                            color="white" if frac[i, j] > 0.5 else "black")
        ax.set_xticks(range(n), cm.classes, rotation=60, ha="right")
        ax.set_yticks(range(n), cm.classes)
        ax.set_xlabel("predicted")
        ax.set_ylabel("gold")
        if title:
            ax.set_title(title)
        _save(fig, path)


def plot_comparison(table, path):
    """Grouped bars of F1 micro/macro with bootstrap interval whiskers."""
    with plt.rc_context(STYLE):
        rows = table.rows
        fig, ax = plt.subplots(figsize=(2.5 + 1.4 * len(rows), 3.6))
        x = np.arange(len(rows))
        for k, (attr, colour) in enumerate((("f1_micro", "C0"), ("f1_macro", "C1"))):
            ci = [getattr(r, attr) for r in rows]
            pts = np.array([c.point for c in ci])
            err = np.array([[max(c.point - c.lower, 0) for c in ci], [max(c.upper - c.point, 0) for c in ci]])
            ax.bar(x + (k - 0.5) * 0.38, pts, 0.38, yerr=err, capsize=3, color=colour,
                   label=attr.replace("_", " "))
        ax.set_xticks(x, [textwrap.fill(r.classifier, 16) + f"\n({r.classes} classes)" for r in rows])
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("F1")
        ax.legend(frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
        ax.set_title(f"split: {table.split}")
        _save(fig, path)
