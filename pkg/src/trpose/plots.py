"""Chart rendering for evaluation reports; every function writes one image
file and returns its path."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import FusionTrace, MatrixCell
from .geometry import Pose2, wrap_angle

_DOF_TITLES = ("x error (m)", "y error (m)", "theta error (deg)")


def plot_rmse_matrix(cells: list[MatrixCell], path: str) -> str:
    runs = sorted({c.repeat_run for c in cells} | {c.teach_run for c in cells})
    pos = {r: i for i, r in enumerate(runs)}
    grids = [np.full((len(runs), len(runs)), np.nan) for _ in range(3)]
    cond = {}
    for c in cells:
        i, j = pos[c.repeat_run], pos[c.teach_run]
        grids[0][i, j] = c.rmse_x_m
        grids[1][i, j] = c.rmse_y_m
        grids[2][i, j] = c.rmse_theta_deg
        cond[c.repeat_run] = c.repeat_condition
    labels = [f"{r}\n{cond.get(r, '')}" for r in runs]
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    for ax, grid, title in zip(axes, grids, _DOF_TITLES):
        im = ax.imshow(grid, cmap="viridis")
        ax.set_title(f"RMSE {title}")
        ax.set_xlabel("teach run")
        ax.set_ylabel("repeat run")
        ax.set_xticks(range(len(runs)), labels)
        ax.set_yticks(range(len(runs)), labels)
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_tracks(tracks: dict[int, list[Pose2]], path: str,
                reference: dict[int, list[Pose2]] | None = None) -> str:
    fig, ax = plt.subplots(figsize=(6, 6))
    for run, poses in sorted(tracks.items()):
        xs = [p.x for p in poses]
        ys = [p.y for p in poses]
        ax.plot(xs, ys, label=f"run {run} (integrated)")
    if reference:
        for run, poses in sorted(reference.items()):
            ax.plot([p.x for p in poses], [p.y for p in poses],
                    linestyle="--", linewidth=0.8, label=f"run {run} (truth)")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title("Integrated VO tracks")
    ax.axis("equal")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_error_cdfs(cdfs: dict[str, np.ndarray], path: str) -> str:
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    for dof, (ax, title) in enumerate(zip(axes, _DOF_TITLES)):
        for name, cdf in sorted(cdfs.items()):
            vals = cdf[:, dof]
            if dof == 2:
                vals = np.degrees(vals)
            frac = np.arange(1, len(vals) + 1) / len(vals)
            ax.plot(vals, frac, label=name)
        ax.set_xlabel(f"absolute {title}")
        ax.set_ylabel("fraction of frames")
        ax.set_ylim(0, 1.02)
        ax.legend(fontsize=7)
    fig.suptitle("Cumulative error distributions")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_fusion_trace(trace: FusionTrace, path: str) -> str:
    steps = list(range(len(trace.steps)))
    errs = np.array([[s.corrected.x - s.target.x,
                      s.corrected.y - s.target.y,
                      math.degrees(wrap_angle(s.corrected.theta - s.target.theta))]
                     for s in trace.steps])
    fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
    for dof, (ax, title) in enumerate(zip(axes, _DOF_TITLES)):
        ax.plot(steps, errs[:, dof])
        ax.axhline(0.0, color="gray", linewidth=0.6)
        ax.set_ylabel(title)
    axes[-1].set_xlabel("step")
    status = " (truncated)" if trace.truncated else ""
    fig.suptitle(f"Fusion errors, repeat {trace.repeat_run} on teach "
                 f"{trace.teach_run}{status}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
