"""Matplotlib figure export for dataset inspection.

Display-only output: figures are rendered straight to files (png/svg/
pdf per extension) next to the delimited metric exports.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import bw, linalg  # noqa: E402


def _ellipse_path(gaussian: bw.Gaussian, n_std: float = 2.0, points: int = 64):
    """Boundary of the n-sigma covariance ellipse of a 2D Gaussian."""
    angles = np.linspace(0.0, 2.0 * np.pi, points)
    circle = np.stack([np.cos(angles), np.sin(angles)])
    return gaussian.mean[:, None] + n_std * linalg.psd_sqrt(gaussian.cov) @ circle


def plot_gaussians(ax, items, color, label, max_items: int = 200):
    # higher-dimensional Gaussians are projected onto the first two axes
    items = [
        g if g.dim == 2 else bw.Gaussian(g.mean[:2], g.cov[:2, :2])
        for g in list(items)[:max_items]
    ]
    means = np.stack([g.mean for g in items])
    ax.scatter(means[:, 0], means[:, 1], s=12, color=color, label=label, zorder=3)
    for g in items:
        path = _ellipse_path(g)
        ax.plot(path[0], path[1], color=color, alpha=0.35, linewidth=0.8)


def plot_pointclouds(ax, items, color, label, max_items: int = 20):
    items = list(items)[:max_items]
    for i, cloud in enumerate(items):
        ax.scatter(cloud.points[:, 0], cloud.points[:, 1], s=4, color=color,
                   alpha=0.5, label=label if i == 0 else None)


def render_comparison(path, generated, reference=None, kind: str = "gaussian",
                      title: str | None = None):
    """Scatter of means/points (with covariance ellipses for 2D
    Gaussians); generated in one color, reference in another."""
    fig, ax = plt.subplots(figsize=(6, 6))
    plot_fn = plot_gaussians if kind == "gaussian" else plot_pointclouds
    if reference is not None:
        plot_fn(ax, reference, color="tab:gray", label="reference")
    plot_fn(ax, generated, color="tab:blue", label="generated")
    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
