"""Figures written next to the CSV/JSON outputs of the pretrain and eval commands."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "hyperroad",
}
_SAVE = {"metadata": {"Software": None}}


def _symlog_ylim(ax, values):
    finite = np.asarray(values)[np.isfinite(values)]
    if finite.size and (finite.min() < 0 or finite.max() > 1e3):
        ax.set_yscale("symlog")


def plot_loss_history(history, path) -> None:
    """Per-step loss terms and the joint total."""
    steps = np.arange(1, len(history) + 1)
    cols = {"l_gr": 0, "l_hr": 1, "l_hc": 2, "l_ar": 3, "total": 4}
    rows = np.array([lb.row() for lb in history]).reshape(-1, 5)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        for name, k in cols.items():
            if len(rows) and np.any(rows[:, k] != 0):
                ax.plot(steps, rows[:, k], label=name, lw=1.4 if name == "total" else 0.9)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        if len(rows):
            _symlog_ylim(ax, rows[:, 4])
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, **_SAVE)
        plt.close(fig)


def plot_eval_report(report, path) -> None:
    """Per-fold micro/macro/weighted F1 with the mean drawn as a line."""
    metrics = ("micro_f1", "macro_f1", "weighted_f1")
    n = len(report.folds)
    x = np.arange(n)
    width = 0.26
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        for k, m in enumerate(metrics):
            vals = [getattr(f, m) for f in report.folds]
            bars = ax.bar(x + (k - 1) * width, vals, width, label=m)
            ax.axhline(np.mean(vals), color=bars.patches[0].get_facecolor(), lw=0.8, ls="--")
        ax.set_xticks(x, [f"fold {k + 1}" for k in range(n)])
        ax.set_ylim(0, 1)
        ax.set_ylabel("F1")
        ax.set_title(report.task)
        ax.legend(frameon=False, ncol=3, loc="upper center", bbox_to_anchor=(0.5, -0.12))
        fig.tight_layout()
        fig.savefig(path, **_SAVE)
        plt.close(fig)
