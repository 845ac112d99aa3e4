"""Evaluation metrics for transferred trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .pointops import interpolate_features, resample_polyline
from .scene_io import Scene, Trajectory

DEFAULT_INLIER_THRESHOLDS = (0.75, 1.0, 1.25, 1.5, 2.0)


@dataclass(frozen=True)
class MetricReport:
    trajectory_aed: float | None = None
    waypoint_aed: float | None = None
    inlier_ratio: dict | None = None      # threshold (m) -> fraction
    collision_ratio: float | None = None
    feature_distance: float | None = None
    length_distortion: float | None = None

    def as_dict(self) -> dict:
        out = {}
        if self.trajectory_aed is not None:
            out["trajectory_aed"] = self.trajectory_aed
        if self.waypoint_aed is not None:
            out["waypoint_aed"] = self.waypoint_aed
        if self.inlier_ratio is not None:
            out["inlier_ratio"] = {f"{t:g}": v for t, v in sorted(self.inlier_ratio.items())}
        if self.collision_ratio is not None:
            out["collision_ratio"] = self.collision_ratio
        if self.feature_distance is not None:
            out["feature_distance"] = self.feature_distance
        if self.length_distortion is not None:
            out["length_distortion"] = self.length_distortion
        return out


def _paired_distances(pred: Trajectory, gt: Trajectory, samples: int) -> np.ndarray:
    a = resample_polyline(pred.points, samples)
    b = resample_polyline(gt.points, samples)
    return np.linalg.norm(a - b, axis=1)


def trajectory_aed(pred: Trajectory, gt: Trajectory, samples: int = 256) -> float:
    """Median index-aligned distance after arc-length resampling."""
    return float(np.median(_paired_distances(pred, gt, samples)))


def inlier_ratio(
    pred: Trajectory,
    gt: Trajectory,
    thresholds=DEFAULT_INLIER_THRESHOLDS,
    samples: int = 256,
) -> dict:
    """Fraction of resampled points within each distance threshold."""
    d = _paired_distances(pred, gt, samples)
    return {float(t): float(np.mean(d <= t)) for t in thresholds}


def collision_ratio(pred: Trajectory, scene: Scene, threshold: float = 0.1) -> float:
    """Fraction of trajectory points closer than ``threshold`` to any object point."""
    obstacles = scene.points[scene.instance_id >= 0]
    if obstacles.shape[0] == 0:
        raise ValueError("scene has no object points")
    d, _ = cKDTree(obstacles).query(pred.points)
    return float(np.mean(d < threshold))


def feature_distance(
    src_traj: Trajectory,
    pred_traj: Trajectory,
    scene_tgt: Scene,
    scene_ref: Scene,
    k: int = 8,
    samples: int = 256,
) -> float:
    """Mean feature discrepancy between source and transferred trajectories.

    Scene features are interpolated to resampled trajectory positions via
    inverse-distance weighted k-NN in each scene.
    """
    src_pts = resample_polyline(src_traj.points, samples)
    pred_pts = resample_polyline(pred_traj.points, samples)
    f_src = interpolate_features(src_pts, scene_tgt.points, scene_tgt.features, k=k)
    f_pred = interpolate_features(pred_pts, scene_ref.points, scene_ref.features, k=k)
    return float(np.mean(np.linalg.norm(f_src - f_pred, axis=1)))


def length_distortion(src: Trajectory, pred: Trajectory, samples: int = 256) -> float:
    """Mean per-segment relative length change.

    Segments correspond index-wise; when the point counts differ, both
    trajectories are first resampled to ``samples`` points.
    """
    a = src.points
    b = pred.points
    if a.shape[0] != b.shape[0]:
        a = resample_polyline(a, samples)
        b = resample_polyline(b, samples)
    la = np.linalg.norm(np.diff(a, axis=0), axis=1)
    lb = np.linalg.norm(np.diff(b, axis=0), axis=1)
    if np.any(la == 0):
        raise ValueError("zero-length source segment")
    return float(np.mean(np.abs(lb - la) / la))


def waypoint_aed(pred_waypoints: np.ndarray, gt_waypoints: np.ndarray) -> float:
    """Median distance between order-aligned waypoint lists."""
    pred_waypoints = np.atleast_2d(pred_waypoints)
    gt_waypoints = np.atleast_2d(gt_waypoints)
    if pred_waypoints.shape[0] != gt_waypoints.shape[0]:
        raise ValueError(
            f"waypoint count mismatch: {pred_waypoints.shape[0]} vs {gt_waypoints.shape[0]}"
        )
    return float(np.median(np.linalg.norm(pred_waypoints - gt_waypoints, axis=1)))


def evaluate(
    pred: Trajectory,
    gts: list,
    scene_tgt: Scene | None = None,
    scene_ref: Scene | None = None,
    src_traj: Trajectory | None = None,
    thresholds=DEFAULT_INLIER_THRESHOLDS,
    collision_thresh: float = 0.1,
    samples: int = 256,
    k: int = 8,
) -> MetricReport:
    """Full metric report; multi-GT metrics take the best value across GTs."""
    if not gts:
        raise ValueError("at least one ground-truth trajectory required")
    aed = min(trajectory_aed(pred, gt, samples) for gt in gts)
    inliers = {}
    for t in thresholds:
        inliers[float(t)] = max(inlier_ratio(pred, gt, [t], samples)[float(t)] for gt in gts)
    wp_aed = None
    if pred.waypoint_indices is not None:
        wp_values = []
        for gt in gts:
            if gt.waypoint_indices is not None and \
                    gt.waypoint_indices.size == pred.waypoint_indices.size:
                wp_values.append(waypoint_aed(pred.waypoints(), gt.waypoints()))
        if wp_values:
            wp_aed = min(wp_values)
    coll = None
    if scene_ref is not None:
        coll = collision_ratio(pred, scene_ref, collision_thresh)
    feat = None
    dist = None
    if src_traj is not None:
        if scene_tgt is not None and scene_ref is not None:
            feat = feature_distance(src_traj, pred, scene_tgt, scene_ref, k, samples)
        dist = length_distortion(src_traj, pred, samples)
    return MetricReport(
        trajectory_aed=aed,
        waypoint_aed=wp_aed,
        inlier_ratio=inliers,
        collision_ratio=coll,
        feature_distance=feat,
        length_distortion=dist,
    )
