"""Static figures written next to the CSV outputs (no interactive display)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_trace(trace, path, title=None):
    """Objective per iteration, with the loss and regularizer parts when present."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    k = trace.column("k")
    ax.plot(k, trace.column("obj"), label="objective", lw=1)
    for name in ("obj_loss_term", "obj_reg_term"):
        if name in trace.columns:
            vals = trace.column(name)
            if np.any(np.isfinite(vals) & (vals != 0)):
                ax.plot(k, vals, label=name.replace("obj_", "").replace("_", " "), lw=0.8,
                        alpha=0.7)
    ax.set_xlabel("iteration")
    ax.legend()
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_accuracy(curves, path, xlabel="perturbation level", title=None):
    """``curves`` maps a label to rows with ``level, mean_acc, min_acc, max_acc``."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, rows in curves.items():
        lv = np.array([r["level"] for r in rows])
        ax.plot(lv, [r["mean_acc"] for r in rows], marker="o", label=label)
        ax.fill_between(lv, [r["min_acc"] for r in rows], [r["max_acc"] for r in rows],
                        alpha=0.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_bench(trace, path):
    """Primal gap and moving-average error on log axes."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    k = trace.column("k")
    for name in ("primal_gap", "ma_error"):
        vals = trace.column(name)
        ok = np.isfinite(vals) & (vals > 0)
        ax.loglog(k[ok] + 1, vals[ok], label=name.replace("_", " "))
    ax.set_xlabel("iteration + 1")
    ax.legend()
    _save(fig, path)
