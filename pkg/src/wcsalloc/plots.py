"""Matplotlib figure builders for training curves, episode traces, and
paired cost comparisons. Figures are saved as self-contained vector files
(suffix decides the backend format); the underlying data always lives in a
CSV next to the image."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def training_curve_figure(
    iterations: np.ndarray,
    mean_cost: np.ndarray,
    mean_cost_undiscounted: np.ndarray | None = None,
) -> plt.Figure:
    """Cost per iteration during learning; one marker per iteration so a
    single-row log still renders."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(iterations, mean_cost, marker=".", markersize=3, lw=1.0, label="discounted")
    if mean_cost_undiscounted is not None:
        ax.plot(
            iterations,
            mean_cost_undiscounted,
            marker=".",
            markersize=3,
            lw=1.0,
            alpha=0.6,
            label="undiscounted",
        )
        ax.legend(frameon=False)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean episode cost")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return fig


def episode_panels_figure(x: np.ndarray, h: np.ndarray, p: np.ndarray) -> plt.Figure:
    """Three stacked panels: plant states, channel fading, allocated power.

    One line per plant (per state coordinate in the top panel)."""
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(6.4, 7.2))
    steps_x = np.arange(x.shape[0])
    steps = np.arange(h.shape[0])
    for i in range(x.shape[1]):
        axes[0].plot(steps_x, x[:, i], lw=1.0)
    for i in range(h.shape[1]):
        axes[1].plot(steps, h[:, i], lw=1.0)
    for i in range(p.shape[1]):
        axes[2].plot(steps, p[:, i], lw=1.0)
    axes[0].set_ylabel("plant state")
    axes[1].set_ylabel("channel fading")
    axes[2].set_ylabel("allocated power")
    axes[2].set_xlabel("t")
    for ax in axes:
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    fig.align_ylabels(axes)
    return fig


def compare_bars_figure(costs: dict[str, np.ndarray]) -> plt.Figure:
    """Grouped per-seed cost bars, one group per evaluation seed."""
    names = list(costs)
    n_seeds = len(next(iter(costs.values())))
    fig, ax = plt.subplots(figsize=(max(6.4, 0.45 * n_seeds), 4.0))
    width = 0.8 / len(names)
    seeds = np.arange(n_seeds)
    for j, name in enumerate(names):
        offset = (j - (len(names) - 1) / 2) * width
        ax.bar(seeds + offset, costs[name], width, label=name)
    ax.set_xlabel("evaluation seed")
    ax.set_ylabel("episode cost")
    ax.set_xticks(seeds)
    ax.legend(frameon=False)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return fig


def save_figure(fig: plt.Figure, path) -> None:
    """Write the figure to `path` and release it."""
    try:
        fig.savefig(path, bbox_inches="tight")
    finally:
        plt.close(fig)
