"""Top-down visualization of scenes and trajectories."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .scene_io import OPEN_SPACE, Scene, Trajectory


def plot_scenes(
    scenes: list,
    trajectories: list | None = None,
    out_path: str = "scene.png",
    labels: list | None = None,
    point_cluster: list | None = None,
) -> None:
    """Write a top-down XZ scatter of one or more scenes with trajectories.

    Object points are colored by instance id (or by cluster id when
    ``point_cluster`` arrays are given); open space is light gray.
    """
    n = max(1, len(scenes))
    fig, axes = plt.subplots(1, n, figsize=(6 * n, 6), squeeze=False)
    trajectories = trajectories or []
    cmap = plt.get_cmap("tab20")
    for col, scene in enumerate(scenes):
        ax = axes[0][col]
        open_mask = scene.instance_id == OPEN_SPACE
        ax.scatter(scene.points[open_mask, 0], scene.points[open_mask, 2],
                   s=1, c="0.85", rasterized=True)
        colors = scene.instance_id if point_cluster is None else point_cluster[col]
        obj_mask = ~open_mask
        ax.scatter(scene.points[obj_mask, 0], scene.points[obj_mask, 2],
                   s=2, c=[cmap(int(v) % 20) for v in colors[obj_mask]], rasterized=True)
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("z [m]")
        if labels and col < len(labels):
            ax.set_title(labels[col])
    traj_axis = axes[0][-1]
    for t_idx, traj in enumerate(trajectories):
        color = plt.get_cmap("tab10")(t_idx % 10)
        traj_axis.plot(traj.points[:, 0], traj.points[:, 2], "-", lw=2,
                       color=color, label=f"trajectory {t_idx}")
        if traj.waypoint_indices is not None:
            wp = traj.waypoints()
            traj_axis.plot(wp[:, 0], wp[:, 2], "o", ms=6, color=color)
    if trajectories:
        traj_axis.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
