"""Shared point-set helpers: sampling, interpolation, polyline resampling."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def farthest_point_sample(points: np.ndarray, count: int, start: int = 0) -> np.ndarray:
    """Indices of a farthest-point subsample, deterministic given ``start``.

    Returns all indices when ``count`` >= number of points. The classic
    greedy scheme: repeatedly add the point farthest from the chosen set.
    """
    points = np.asarray(points)
    n = points.shape[0]
    if count >= n:
        return np.arange(n, dtype=np.int64)
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    dist = np.linalg.norm(points - points[start], axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return chosen


def interpolate_features(
    query: np.ndarray,
    points: np.ndarray,
    features: np.ndarray,
    k: int = 8,
    tree: cKDTree | None = None,
) -> np.ndarray:
    """Inverse-distance weighted k-NN feature interpolation.

    Weights are 1/(d + 1e-6), renormalized to sum to one per query point.
    """
    query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    if tree is None:
        tree = cKDTree(points)
    k = min(k, tree.n)
    dist, idx = tree.query(query, k=k)
    if k == 1:
        dist = dist[:, None]
        idx = idx[:, None]
    w = 1.0 / (dist + 1e-6)
    w /= w.sum(axis=1, keepdims=True)
    return np.einsum("qk,qkd->qd", w, features[idx])


def arc_lengths(points: np.ndarray) -> np.ndarray:
    """Cumulative arc length along a polyline, starting at 0."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_polyline(points: np.ndarray, count: int) -> np.ndarray:
    """Resample a polyline to ``count`` points at equal arc-length spacing."""
    points = np.asarray(points, dtype=np.float64)
    if count < 2:
        raise ValueError("resampling needs at least 2 points")
    s = arc_lengths(points)
    targets = np.linspace(0.0, s[-1], count)
    out = np.empty((count, 3))
    for axis in range(3):
        out[:, axis] = np.interp(targets, s, points[:, axis])
    return out
