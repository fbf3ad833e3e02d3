"""Figures written next to the tabular outputs (non-interactive backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Circle, Polygon, Rectangle  # noqa: E402
import numpy as np  # noqa: E402

from .environment import Box, ConvexPolygon  # noqa: E402

# PNG metadata would otherwise carry the matplotlib version string
SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def _save(fig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **SAVE_KW)
    plt.close(fig)


def draw_workspace(ax, ws) -> None:
    lo, hi = ws.bounds.lo, ws.bounds.hi
    ax.add_patch(Rectangle(lo, *(hi - lo), fill=False, lw=1.0, ec="k"))
    for o in ws.obstacles:
        if isinstance(o, Box):
            ax.add_patch(Rectangle(o.lo[:2], *(o.hi[:2] - o.lo[:2]), fc="0.35", ec="none"))
        elif isinstance(o, ConvexPolygon):
            ax.add_patch(Polygon(o.vertices, fc="0.35", ec="none"))
    if ws.goal is not None:
        ax.add_patch(Circle(ws.goal.center, ws.goal.radius, fc="tab:green", alpha=0.35, ec="tab:green"))
    ax.set_xlim(lo[0], hi[0])
    ax.set_ylim(lo[1], hi[1])
    ax.set_aspect("equal")


def plot_levels(rows, path) -> None:
    """Basis counts, iteration counts and value error per level."""
    lv = [r["level"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    axes[0].semilogy(lv, [r["bases"] for r in rows], "o-")
    axes[0].set_ylabel("basis functions")
    axes[1].plot(lv, [r["warm_iterations"] for r in rows], "o-", label="coarse-to-fine")
    if all("cold_iterations" in r for r in rows):
        axes[1].plot(lv, [r["cold_iterations"] for r in rows], "s--", label="from ones")
    axes[1].set_ylabel("power iterations")
    axes[1].legend()
    err = np.maximum([r["rms_value_error"] for r in rows], 1e-16)
    axes[2].semilogy(lv, err, "o-")
    axes[2].set_ylabel("RMS value error vs level 0")
    for ax in axes:
        ax.set_xlabel("level")
    fig.tight_layout()
    _save(fig, path)


def plot_value(samples, v, ws, path, title: str = "") -> None:
    """Value over positions; states sharing a position show their lowest value."""
    pts = samples.points[:, :2]
    v = np.asarray(v, dtype=float)
    if samples.dim > 2:
        keys, inv = np.unique(np.round(pts, 12), axis=0, return_inverse=True)
        best = np.full(len(keys), np.inf)
        np.minimum.at(best, inv.ravel(), v)
        pts, v = keys, best
    fig, ax = plt.subplots(figsize=(5.5, 5))
    draw_workspace(ax, ws)
    sc = ax.scatter(pts[:, 0], pts[:, 1], c=v, s=12, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="value")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_trajectories(ws, paths, path, title: str = "") -> None:
    """Planar traces; ``paths`` holds ``(points, status)`` pairs."""
    colors = {"goal": "tab:blue", "collision": "tab:red"}
    fig, ax = plt.subplots(figsize=(5.5, 5))
    draw_workspace(ax, ws)
    for pts, status in paths:
        if len(pts):
            ax.plot(pts[:, 0], pts[:, 1], lw=0.8, color=colors.get(status, "tab:orange"))
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    _save(fig, path)
