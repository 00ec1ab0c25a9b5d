"""Figure rendering for validation reports.

Renders matplotlib figures to files next to the delimited trajectory output:
a state-space (or time-series) view of the replicate bundle with the
specification geometry drawn in, and a winning-set slice for synthesized
controllers. Import stays lazy-friendly: the Agg backend is forced so the
functions work headless.
"""

from __future__ import annotations

from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Rectangle

from .synth import Controller
from .validate import InvarianceSpec, ReachAvoidSpec, TrajectoryBundle

_PNG_META = {"Software": None}  # keep byte-identical output across reruns


def _draw_box(ax, box, **kwargs):
    box = np.asarray(box, dtype=float)
    ax.add_patch(Rectangle(
        (box[0, 0], box[1, 0]), box[0, 1] - box[0, 0], box[1, 1] - box[1, 0], **kwargs
    ))


def plot_trajectories_xy(bundle: TrajectoryBundle, spec, path: str,
                         state_box=None, max_replicates: int = 200) -> None:
    """Planar view of the first two state components with spec geometry."""
    fig, ax = plt.subplots(figsize=(6.0, 6.0))
    if state_box is not None:
        box = np.asarray(state_box, dtype=float)
        ax.set_xlim(box[0, 0], box[0, 1])
        ax.set_ylim(box[1, 0], box[1, 1])
    if isinstance(spec, ReachAvoidSpec):
        for obs in spec.obstacle_boxes:
            _draw_box(ax, obs, facecolor="black", alpha=0.85, zorder=1)
        _draw_box(ax, spec.target_box, facecolor="tab:green", alpha=0.35, zorder=1)
    elif isinstance(spec, InvarianceSpec):
        _draw_box(ax, spec.safe_box, facecolor="tab:green", alpha=0.18, zorder=1)
    for states in bundle.states[:max_replicates]:
        ax.plot(states[:, 0], states[:, 1], color="tab:blue", alpha=0.12,
                linewidth=0.7, zorder=2)
    mean = bundle.mean_trajectory
    valid = ~np.any(np.isnan(mean), axis=1)
    ax.plot(mean[valid, 0], mean[valid, 1], color="black", linewidth=2.0,
            zorder=3, label="mean trajectory")
    ax.plot(bundle.initial_state[0], bundle.initial_state[1], marker="o",
            color="tab:red", zorder=4, label="start")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=_PNG_META)
    plt.close(fig)


def plot_trajectories_time(bundle: TrajectoryBundle, spec, path: str,
                           max_replicates: int = 200) -> None:
    """Per-dimension time series of the bundle with safe-set bands."""
    n = bundle.states[0].shape[1]
    fig, axes = plt.subplots(n, 1, figsize=(7.0, 2.2 * n), sharex=True)
    axes = np.atleast_1d(axes)
    safe = spec.safe_box if isinstance(spec, InvarianceSpec) else None
    for i, ax in enumerate(axes):
        for states in bundle.states[:max_replicates]:
            ax.plot(np.arange(states.shape[0]), states[:, i], color="tab:blue",
                    alpha=0.10, linewidth=0.6)
        mean = bundle.mean_trajectory
        valid = ~np.any(np.isnan(mean), axis=1)
        ax.plot(np.nonzero(valid)[0], mean[valid, i], color="black", linewidth=1.8)
        if safe is not None:
            ax.axhline(safe[i, 0], color="tab:red", linestyle="--", linewidth=1.0)
            ax.axhline(safe[i, 1], color="tab:red", linestyle="--", linewidth=1.0)
        ax.set_ylabel(f"x{i+1}")
    axes[-1].set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=_PNG_META)
    plt.close(fig)


def plot_winning_set(controller: Controller, path: str,
                     slice_axes=(0, 1), slice_index: Optional[dict] = None) -> None:
    """Projection of the winning set onto two grid axes (any winning cell in
    the projected fiber colors the pixel)."""
    grid = controller.grid
    counts = grid.counts
    a0, a1 = slice_axes
    img = np.zeros((counts[a0], counts[a1]), dtype=bool)
    coords = grid.coords_of(np.nonzero(controller.winning)[0])
    if coords.size:
        if slice_index:
            keep = np.ones(coords.shape[0], dtype=bool)
            for axis, idx in slice_index.items():
                keep &= coords[:, axis] == idx
            coords = coords[keep]
        img[coords[:, a0], coords[:, a1]] = True
    fig, ax = plt.subplots(figsize=(5.5, 5.0))
    extent = [grid.state_box[a1, 0], grid.state_box[a1, 1],
              grid.state_box[a0, 0], grid.state_box[a0, 1]]
    ax.imshow(img, origin="lower", extent=extent, aspect="auto",
              cmap="Greens", vmin=0, vmax=1)
    ax.set_xlabel(f"x{a1+1}")
    ax.set_ylabel(f"x{a0+1}")
    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=_PNG_META)
    plt.close(fig)


def plot_gap_profile(gap, state_box, u, path: str, axis: int = 0,
                     n_points: int = 200) -> None:
    """Gap magnitude along one state axis (others at the box midpoint)."""
    box = np.asarray(state_box, dtype=float)
    mid = box.mean(axis=1)
    xs = np.linspace(box[axis, 0], box[axis, 1], n_points)
    pts = np.tile(mid, (n_points, 1))
    pts[:, axis] = xs
    u = np.atleast_1d(np.asarray(u, dtype=float))
    stacked = np.concatenate([pts, np.tile(u, (n_points, 1))], axis=1)
    values = gap.evaluate_batch(stacked)
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    for i in range(values.shape[1]):
        ax.plot(xs, values[:, i], label=f"dim {i+1}")
    ax.set_xlabel(f"x{axis+1}")
    ax.set_ylabel("gap bound")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130, metadata=_PNG_META)
    plt.close(fig)
