"""Figures written next to the CSV outputs (headless Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import pareto_points  # noqa: E402

_COLORS = ("tab:green", "tab:red", "tab:blue", "tab:orange", "tab:purple", "tab:brown")


def pareto_figure(clouds: dict, path, xlabel="accuracy", ylabel="phi") -> None:
    """Scatter each point cloud and draw its non-dominated front as a step line."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for color, (name, pts) in zip(_COLORS * 4, clouds.items()):
        if len(pts) == 0:
            continue
        P, on = pareto_points(pts)
        ax.scatter(P[:, 0], P[:, 1], s=14, alpha=0.5, color=color, label=name)
        front = P[on][np.argsort(P[on][:, 0])]
        ax.step(front[:, 0], front[:, 1], where="post", color=color, linewidth=1.5)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def sweep_figure(series: dict, path, xlabel: str, ylabel: str) -> None:
    """Mean with a standard-error band per series; ``series[name] = (x, mean, se)``."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for color, (name, (x, m, se)) in zip(_COLORS * 4, series.items()):
        x, m, se = (np.asarray(v, dtype=float) for v in (x, m, se))
        ax.plot(x, m, marker="o", color=color, label=name)
        ax.fill_between(x, m - se, m + se, color=color, alpha=0.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def curve_figure(rows, path, keys=("objective", "kl", "mean_phi")) -> None:
    """Per-epoch training curve, one panel per key."""
    fig, axes = plt.subplots(1, len(keys), figsize=(4 * len(keys), 3.2))
    epochs = [r["epoch"] for r in rows]
    for ax, k in zip(np.atleast_1d(axes), keys):
        ax.plot(epochs, [r[k] for r in rows], marker=".")
        ax.set_xlabel("epoch")
        ax.set_title(k)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
