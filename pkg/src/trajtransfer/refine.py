"""Gradient-based trajectory refinement after the initial global warp."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .pointops import interpolate_features
from .scene_io import Scene
from .smoothmap import SmoothMap

_KDE_CUTOFF_SIGMAS = 3.0


def initial_transfer(traj_points: np.ndarray, global_map: SmoothMap) -> np.ndarray:
    """Warp every trajectory point through the global scene map."""
    return global_map(np.asarray(traj_points, dtype=np.float64))


class NavigabilityField:
    """Truncated Gaussian KDE over navigable points.

    Density at x is the sum of exp(-||x - n||^2 / (2 sigma^2)) over navigable
    points within 3 sigma. The threshold tau is the mean density at the
    navigable points themselves.
    """

    def __init__(self, navigable: np.ndarray, bandwidth: float, threshold: float | None = None):
        self.points = np.asarray(navigable, dtype=np.float64)
        self.bandwidth = float(bandwidth)
        self.tree = cKDTree(self.points)
        if threshold is None:
            threshold = float(np.mean(self.density(self.points)))
        self.threshold = threshold

    def _neighbor_blocks(self, x: np.ndarray):
        radius = _KDE_CUTOFF_SIGMAS * self.bandwidth
        lists = self.tree.query_ball_point(x, radius)
        lengths = np.array([len(l) for l in lists], dtype=np.int64)
        flat = np.concatenate([np.asarray(l, dtype=np.int64) for l in lists]) \
            if lengths.sum() > 0 else np.zeros(0, dtype=np.int64)
        return lengths, flat

    def density(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        lengths, flat = self._neighbor_blocks(x)
        rho = np.zeros(x.shape[0])
        if flat.size == 0:
            return rho
        diffs = np.repeat(x, lengths, axis=0) - self.points[flat]
        kern = np.exp(-np.sum(diffs * diffs, axis=1) / (2.0 * self.bandwidth ** 2))
        bounds = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        sums = np.add.reduceat(kern, bounds)
        rho[lengths > 0] = sums[lengths > 0]
        return rho

    def density_and_gradient(self, x: np.ndarray) -> tuple:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        lengths, flat = self._neighbor_blocks(x)
        rho = np.zeros(x.shape[0])
        grad = np.zeros_like(x)
        if flat.size == 0:
            return rho, grad
        diffs = np.repeat(x, lengths, axis=0) - self.points[flat]
        kern = np.exp(-np.sum(diffs * diffs, axis=1) / (2.0 * self.bandwidth ** 2))
        bounds = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        mask = lengths > 0
        rho[mask] = np.add.reduceat(kern, bounds)[mask]
        contrib = kern[:, None] * diffs * (-1.0 / self.bandwidth ** 2)
        for axis in range(3):
            grad[mask, axis] = np.add.reduceat(contrib[:, axis], bounds)[mask]
        return rho, grad


@dataclass
class RefinementState:
    """Variables, targets and weights of the trajectory energy.

    ``variables`` are the optimized positions (initialized to the warped
    anchors), ``anchors`` the initial warp, ``edge_lengths`` the source
    polyline spacing, and ``sparse_targets`` the feature-matched attractor
    positions keyed by trajectory index.
    """

    variables: np.ndarray            # (M, 3)
    anchors: np.ndarray              # (M, 3)
    edge_lengths: np.ndarray         # (M - 1,)
    nav_field: NavigabilityField
    sparse_targets: dict = field(default_factory=dict)
    lambda_shape: float = 1.0
    lambda_anchor: float = 0.1
    lambda_nav: float = 1.0
    lambda_feat: float = 1.0

    def __post_init__(self):
        self.variables = np.array(self.variables, dtype=np.float64)
        self.anchors = np.array(self.anchors, dtype=np.float64)
        self.edge_lengths = np.asarray(self.edge_lengths, dtype=np.float64)
        m = self.variables.shape[0]
        if self.anchors.shape != (m, 3) or self.edge_lengths.shape != (m - 1,):
            raise ValueError("inconsistent refinement state shapes")
        if np.any(self.edge_lengths <= 0):
            raise ValueError("edge lengths must be positive")
        for idx in self.sparse_targets:
            if not 0 <= idx < m:
                raise ValueError("sparse target index out of range")


def _shape_term(v: np.ndarray, lengths: np.ndarray) -> tuple:
    m = v.shape[0]
    d = np.diff(v, axis=0)
    norms = np.linalg.norm(d, axis=1)
    resid = norms - lengths
    value = float(np.sum(resid ** 2) / (m - 1))
    grad = np.zeros_like(v)
    safe = norms > 1e-12
    unit = np.zeros_like(d)
    unit[safe] = d[safe] / norms[safe, None]
    per_edge = (2.0 / (m - 1)) * resid[:, None] * unit
    grad[1:] += per_edge
    grad[:-1] -= per_edge
    return value, grad


def _pull_term(v: np.ndarray, targets: np.ndarray, scale: float) -> tuple:
    # Mean Euclidean distance to fixed targets; subgradient 0 at coincidence.
    d = v - targets
    norms = np.linalg.norm(d, axis=1)
    value = float(np.sum(norms) * scale)
    grad = np.zeros_like(v)
    safe = norms > 1e-12
    grad[safe] = scale * d[safe] / norms[safe, None]
    return value, grad


def energy(state: RefinementState, with_gradient: bool = False):
    """Total refinement energy; optionally its analytic gradient.

    Terms: squared edge-length deviation, mean anchor distance, squared
    density shortfall below the navigability threshold, and mean distance to
    the sparse feature targets.
    """
    v = state.variables
    m = v.shape[0]

    e_shape, g_shape = _shape_term(v, state.edge_lengths)
    e_anchor, g_anchor = _pull_term(v, state.anchors, 1.0 / m)

    rho, rho_grad = state.nav_field.density_and_gradient(v)
    shortfall = np.maximum(0.0, state.nav_field.threshold - rho)
    e_nav = float(np.sum(shortfall ** 2) / m)
    g_nav = (-2.0 / m) * shortfall[:, None] * rho_grad

    if state.sparse_targets:
        idx = np.array(sorted(state.sparse_targets), dtype=np.int64)
        tgt = np.array([state.sparse_targets[i] for i in idx])
        d = v[idx] - tgt
        norms = np.linalg.norm(d, axis=1)
        e_feat = float(np.mean(norms))
        g_feat = np.zeros_like(v)
        safe = norms > 1e-12
        g_feat[idx[safe]] = d[safe] / (norms[safe, None] * idx.size)
    else:
        e_feat = 0.0
        g_feat = np.zeros_like(v)

    terms = {
        "shape": e_shape,
        "anchor": e_anchor,
        "nav": e_nav,
        "feat": e_feat,
    }
    terms["total"] = (
        state.lambda_shape * e_shape
        + state.lambda_anchor * e_anchor
        + state.lambda_nav * e_nav
        + state.lambda_feat * e_feat
    )
    if not with_gradient:
        return terms
    grad = (
        state.lambda_shape * g_shape
        + state.lambda_anchor * g_anchor
        + state.lambda_nav * g_nav
        + state.lambda_feat * g_feat
    )
    return terms, grad


def sparse_feature_targets(
    traj_points: np.ndarray,
    warped: np.ndarray,
    scene_tgt: Scene,
    scene_ref: Scene,
    radius: float = 1.0,
    count: int = 50,
    k: int = 8,
) -> dict:
    """Feature-matched attractor positions for evenly spaced trajectory samples.

    For each sampled index, reference points within an XZ disk of ``radius``
    around the warped position are ranked by feature distance to the source
    feature (interpolated at the original trajectory point); the best match
    becomes the target. Samples with an empty disk are dropped.
    """
    m = traj_points.shape[0]
    sample_idx = np.unique(np.round(np.linspace(0, m - 1, min(count, m))).astype(np.int64))
    src_feats = interpolate_features(
        traj_points[sample_idx], scene_tgt.points, scene_tgt.features, k=k
    )
    ref_xz_tree = cKDTree(scene_ref.points[:, [0, 2]])
    targets = {}
    for row, i in enumerate(sample_idx):
        hits = ref_xz_tree.query_ball_point(warped[i, [0, 2]], radius)
        if not hits:
            continue
        hits = np.sort(np.asarray(hits, dtype=np.int64))
        fd = np.linalg.norm(scene_ref.features[hits] - src_feats[row], axis=1)
        targets[int(i)] = scene_ref.points[hits[np.argmin(fd)]].copy()
    return targets


def refine(state: RefinementState, steps: int = 200, lr: float = 0.02) -> tuple:
    """Adaptive-moment descent on the trajectory energy.

    Returns (best positions, diagnostics). The iterate with the lowest total
    energy wins, so the result never exceeds the input energy. Non-finite
    energies abort and return the initial positions with ``failed`` set.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    v = state.variables.copy()
    init = v.copy()
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m_acc = np.zeros_like(v)
    v_acc = np.zeros_like(v)

    terms = energy(state)
    if not np.isfinite(terms["total"]):
        return init, {"failed": True, "trace": [terms], "best_step": 0}
    best_terms = terms
    best_v = v.copy()
    best_step = 0
    trace = [terms]

    work = RefinementState(
        variables=v,
        anchors=state.anchors,
        edge_lengths=state.edge_lengths,
        nav_field=state.nav_field,
        sparse_targets=state.sparse_targets,
        lambda_shape=state.lambda_shape,
        lambda_anchor=state.lambda_anchor,
        lambda_nav=state.lambda_nav,
        lambda_feat=state.lambda_feat,
    )
    for step in range(1, steps + 1):
        _, grad = energy(work, with_gradient=True)
        m_acc = beta1 * m_acc + (1 - beta1) * grad
        v_acc = beta2 * v_acc + (1 - beta2) * grad ** 2
        m_hat = m_acc / (1 - beta1 ** step)
        v_hat = v_acc / (1 - beta2 ** step)
        work.variables = work.variables - lr * m_hat / (np.sqrt(v_hat) + eps)
        terms = energy(work)
        trace.append(terms)
        if not np.isfinite(terms["total"]):
            return init, {"failed": True, "trace": trace, "best_step": 0}
        if terms["total"] < best_terms["total"]:
            best_terms = terms
            best_v = work.variables.copy()
            best_step = step
    return best_v, {
        "failed": False,
        "trace": trace,
        "best_step": best_step,
        "final": best_terms,
    }


def build_refinement_state(
    traj_points: np.ndarray,
    global_map: SmoothMap,
    scene_tgt: Scene,
    scene_ref: Scene,
    nav_field: NavigabilityField,
    lambda_shape: float = 1.0,
    lambda_anchor: float = 0.1,
    lambda_nav: float = 1.0,
    lambda_feat: float = 1.0,
    feat_radius: float = 1.0,
    sparse_count: int = 50,
    feature_knn: int = 8,
) -> RefinementState:
    """Assemble the energy state for a trajectory under a fitted global map."""
    pts = np.asarray(traj_points, dtype=np.float64)
    anchors = initial_transfer(pts, global_map)
    lengths = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    targets = sparse_feature_targets(
        pts, anchors, scene_tgt, scene_ref,
        radius=feat_radius, count=sparse_count, k=feature_knn,
    )
    return RefinementState(
        variables=anchors.copy(),
        anchors=anchors,
        edge_lengths=lengths,
        nav_field=nav_field,
        sparse_targets=targets,
        lambda_shape=lambda_shape,
        lambda_anchor=lambda_anchor,
        lambda_nav=lambda_nav,
        lambda_feat=lambda_feat,
    )


def transfer_waypoints(
    waypoint_points: np.ndarray,
    global_map: SmoothMap,
    scene_tgt: Scene,
    scene_ref: Scene,
    nav_field: NavigabilityField,
    steps: int = 200,
    lr: float = 0.02,
    **state_kwargs,
) -> tuple:
    """Warp and refine only the waypoint subsequence of a trajectory.

    The same energy is used; edge lengths are the straight-line spacings of
    consecutive waypoints. Returns (refined waypoints, diagnostics).
    """
    state = build_refinement_state(
        waypoint_points, global_map, scene_tgt, scene_ref, nav_field, **state_kwargs
    )
    return refine(state, steps=steps, lr=lr)
