"""Report figures rendered to files with the non-interactive Agg backend.

All figures are deterministic functions of their inputs (no timestamps, no
randomness), so identical runs produce identical image bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .pipeline import ExperimentResult


def save_mpe_bars(table: dict[str, float], path) -> None:
    """Bar chart of per-channel mean percentage depth error."""
    names = sorted(table, key=lambda name: table[name])
    values = [100.0 * table[name] for name in names]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    bars = ax.bar(names, values, color="#4878a8")
    ax.bar_label(bars, fmt="%.2f")
    ax.set_ylabel("MPE (%)")
    ax.set_title("Depth error by estimator channel")
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_error_scatter(result: ExperimentResult, path,
                       channels=("geo_center", "gnd_center", "fused")) -> None:
    """Relative depth error versus true depth for selected channels."""
    gt = result.gt
    fig, ax = plt.subplots(figsize=(8, 4.5))
    markers = ("o", "s", "^", "v", "D")
    for i, name in enumerate(channels):
        err = 100.0 * np.abs(result.channel(name) - gt) / gt
        ax.scatter(gt, err, s=14, alpha=0.6, label=name, marker=markers[i % len(markers)])
    ax.set_xlabel("true depth (m)")
    ax.set_ylabel("|error| (%)")
    ax.set_title("Depth error vs distance")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curve(history, path) -> None:
    """Fit objective per iteration on a log scale."""
    history = np.asarray(history, dtype=float)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(np.arange(history.size), history, color="#a84848")
    if np.all(history > 0):
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("align loss (m)")
    ax.set_title("Grid fit convergence")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_grid_heatmap(values, stride: float, path) -> None:
    """Fitted depth field as an image-aligned heatmap."""
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(8, 3.2))
    h, w = values.shape
    im = ax.imshow(
        values,
        origin="upper",
        extent=(0, (w - 1) * stride, (h - 1) * stride, 0),
        cmap="viridis",
        aspect="auto",
    )
    fig.colorbar(im, ax=ax, label="depth (m)")
    ax.set_xlabel("u (px)")
    ax.set_ylabel("v (px)")
    ax.set_title("Fitted depth grid")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
