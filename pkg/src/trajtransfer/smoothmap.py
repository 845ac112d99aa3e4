"""Smooth maps: similarity seeds plus 3D thin-plate-spline deformations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .pointops import farthest_point_sample


@dataclass(frozen=True)
class SmoothMap:
    """Map R^3 -> R^3: affine part plus biharmonic kernel U(r) = r.

    phi(x) = [x, 1] @ affine + sum_k weights[k] * ||x - controls[k]||.
    ``affine_only`` flags maps produced by the least-squares fallback (or
    built directly from a similarity transform).
    """

    controls: np.ndarray      # (N, 3) TPS control points (may be empty)
    weights: np.ndarray       # (N, 3) kernel coefficients
    affine: np.ndarray        # (4, 3), rows: linear part then translation
    regularization: float = 0.0
    affine_only: bool = False

    @classmethod
    def from_affine(cls, linear: np.ndarray, translation: np.ndarray) -> "SmoothMap":
        affine = np.vstack([np.asarray(linear, dtype=np.float64).T,
                            np.asarray(translation, dtype=np.float64)])
        return cls(
            controls=np.zeros((0, 3)),
            weights=np.zeros((0, 3)),
            affine=affine,
            affine_only=True,
        )

    @classmethod
    def identity(cls) -> "SmoothMap":
        return cls.from_affine(np.eye(3), np.zeros(3))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        out = pts @ self.affine[:3] + self.affine[3]
        if self.controls.shape[0] > 0:
            out = out + cdist(pts, self.controls) @ self.weights
        return out[0] if single else out


def fit_affine(source: np.ndarray, targets: np.ndarray) -> SmoothMap:
    """Least-squares affine fit; minimum-norm for rank-deficient inputs."""
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    p = np.hstack([src, np.ones((src.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(p, tgt, rcond=None)
    return SmoothMap(
        controls=np.zeros((0, 3)),
        weights=np.zeros((0, 3)),
        affine=coef,
        affine_only=True,
    )


def fit_tps(source: np.ndarray, targets: np.ndarray, lam: float = 0.0) -> SmoothMap:
    """Regularized 3D thin-plate-spline through point correspondences.

    Solves the bordered system [[K + lam*I, P], [P^T, 0]] for kernel weights
    and the affine part; side conditions P^T W = 0 hold by construction.
    With lam = 0 the map interpolates the targets. Fewer than four or
    coplanar correspondences fall back to an affine least-squares fit.
    """
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    n = src.shape[0]
    if n < 4:
        return fit_affine(src, tgt)
    p = np.hstack([src, np.ones((n, 1))])
    if np.linalg.matrix_rank(p, tol=1e-9 * max(1.0, np.abs(src).max())) < 4:
        return fit_affine(src, tgt)
    k = cdist(src, src)
    if lam > 0:
        k = k + lam * np.eye(n)
    L = np.zeros((n + 4, n + 4))
    L[:n, :n] = k
    L[:n, n:] = p
    L[n:, :n] = p.T
    rhs = np.zeros((n + 4, 3))
    rhs[:n] = tgt
    try:
        sol = np.linalg.solve(L, rhs)
    except np.linalg.LinAlgError:
        return fit_affine(src, tgt)
    if not np.all(np.isfinite(sol)):
        return fit_affine(src, tgt)
    return SmoothMap(
        controls=src.copy(),
        weights=sol[:n],
        affine=sol[n:],
        regularization=lam,
    )


_REFLECTIONS = (
    np.diag([1.0, 1.0, 1.0]),    # identity
    np.diag([-1.0, 1.0, 1.0]),   # flip x
    np.diag([1.0, 1.0, -1.0]),   # flip z
    np.diag([-1.0, 1.0, -1.0]),  # flip xz
)


def _y_rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class Seed:
    """Similarity transform T(x) = linear @ (x - origin_tgt) + origin_ref."""

    linear: np.ndarray        # (3, 3) scale * reflection * rotation
    origin_tgt: np.ndarray    # (3,)
    origin_ref: np.ndarray    # (3,)
    rotation_index: int
    reflection_index: int
    scaled: bool
    node_pair: tuple

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (np.atleast_2d(x) - self.origin_tgt) @ self.linear.T + self.origin_ref

    def as_map(self) -> SmoothMap:
        translation = self.origin_ref - self.linear @ self.origin_tgt
        return SmoothMap.from_affine(self.linear, translation)


def _bbox_scale(tgt_points: np.ndarray, ref_points: np.ndarray) -> np.ndarray:
    ext_t = tgt_points.max(axis=0) - tgt_points.min(axis=0)
    ext_r = ref_points.max(axis=0) - ref_points.min(axis=0)
    scale = np.ones(3)
    ok = (ext_t > 1e-9) & (ext_r > 1e-9)
    scale[ok] = ext_r[ok] / ext_t[ok]
    return scale


def enumerate_seeds(
    tgt_cluster_points: np.ndarray,
    ref_cluster_points: np.ndarray,
    tgt_node_centroids: np.ndarray,
    ref_node_centroids: np.ndarray,
    n_rotations: int = 4,
) -> list:
    """All similarity seeds for one matched cluster pair.

    Combines evenly spaced y-rotations, four axis-aligned reflections,
    identity or bounding-box-ratio scaling, and translations anchoring each
    target node centroid to each reference node centroid. Duplicate
    transforms (e.g. flip-xz equals a 180-degree rotation) are removed.
    """
    if tgt_cluster_points.shape[0] == 0 or ref_cluster_points.shape[0] == 0:
        return []
    scales = [np.ones(3), _bbox_scale(tgt_cluster_points, ref_cluster_points)]
    seeds = []
    seen = set()
    for t_idx in range(tgt_node_centroids.shape[0]):
        o_t = tgt_node_centroids[t_idx]
        for r_idx in range(ref_node_centroids.shape[0]):
            o_r = ref_node_centroids[r_idx]
            for rot_i in range(n_rotations):
                rot = _y_rotation(2.0 * np.pi * rot_i / n_rotations)
                for refl_i, refl in enumerate(_REFLECTIONS):
                    for scale_i, scale in enumerate(scales):
                        linear = np.diag(scale) @ refl @ rot
                        translation = o_r - linear @ o_t
                        key = tuple(np.round(np.concatenate([linear.ravel(), translation]), 9))
                        if key in seen:
                            continue
                        seen.add(key)
                        seeds.append(Seed(
                            linear=linear,
                            origin_tgt=o_t.copy(),
                            origin_ref=o_r.copy(),
                            rotation_index=rot_i,
                            reflection_index=refl_i,
                            scaled=bool(scale_i == 1),
                            node_pair=(t_idx, r_idx),
                        ))
    return seeds


def seed_residual(seed: Seed, tgt_points: np.ndarray, ref_tree: cKDTree) -> float:
    """Mean nearest-neighbor distance of transformed points to the reference."""
    d, _ = ref_tree.query(seed.apply(tgt_points))
    return float(np.mean(d))


def feature_cost(
    smooth_map: SmoothMap,
    tgt_points: np.ndarray,
    tgt_features: np.ndarray,
    ref_points: np.ndarray,
    ref_features: np.ndarray,
    ref_tree: cKDTree | None = None,
) -> float:
    """Mean feature discrepancy after warping (lower is better).

    Each target cluster point is warped, matched to its spatially nearest
    reference cluster point, and the Euclidean feature distance of the pair
    is averaged over the cluster.
    """
    if ref_tree is None:
        ref_tree = cKDTree(ref_points)
    warped = smooth_map(tgt_points)
    _, nn = ref_tree.query(warped)
    return float(np.mean(np.linalg.norm(tgt_features - ref_features[nn], axis=1)))


@dataclass(frozen=True)
class MapCandidate:
    smooth_map: SmoothMap
    seed: Seed
    feat_cost: float
    cluster_pair: tuple       # (target cluster, reference cluster, match rank)


def fit_cluster_candidates(
    tgt_points: np.ndarray,
    tgt_features: np.ndarray,
    tgt_node_centroids: np.ndarray,
    ref_points: np.ndarray,
    ref_features: np.ndarray,
    ref_node_centroids: np.ndarray,
    ref_scene_points: np.ndarray,
    cluster_pair: tuple,
    n_rotations: int = 4,
    top_m: int = 5,
    seed_cap: int = 128,
    control_budget: int = 200,
    tps_lambda_scale: float = 1e-3,
    ref_scene_tree: cKDTree | None = None,
    ref_cluster_tree: cKDTree | None = None,
) -> list:
    """Candidate smooth maps for one matched cluster pair, best first.

    Per seed: transform the target cluster, take nearest-neighbor
    correspondences into the reference scene, fit a TPS through them, and
    score by feature discrepancy. The ``top_m`` lowest-cost candidates are
    returned. Clusters too small for a TPS keep the plain similarity seed.
    """
    if tgt_points.shape[0] == 0 or ref_points.shape[0] == 0:
        return []
    if ref_scene_tree is None:
        ref_scene_tree = cKDTree(ref_scene_points)
    if ref_cluster_tree is None:
        ref_cluster_tree = cKDTree(ref_points)

    seeds = enumerate_seeds(
        tgt_points, ref_points, tgt_node_centroids, ref_node_centroids, n_rotations
    )
    if not seeds:
        return []
    if len(seeds) > seed_cap:
        node_tree = cKDTree(ref_node_centroids)
        residuals = np.array([seed_residual(s, tgt_node_centroids, node_tree) for s in seeds])
        order = np.argsort(residuals, kind="stable")[:seed_cap]
        seeds = [seeds[i] for i in order]

    control_idx = farthest_point_sample(tgt_points, control_budget)
    controls_src = tgt_points[control_idx]
    bbox_diag = float(np.linalg.norm(tgt_points.max(axis=0) - tgt_points.min(axis=0)))
    lam = tps_lambda_scale * bbox_diag
    degenerate = controls_src.shape[0] < 4

    candidates = []
    for seed in seeds:
        if degenerate:
            smooth_map = seed.as_map()
        else:
            _, nn = ref_scene_tree.query(seed.apply(controls_src))
            smooth_map = fit_tps(controls_src, ref_scene_points[nn], lam)
        cost = feature_cost(
            smooth_map, tgt_points, tgt_features, ref_points, ref_features, ref_cluster_tree
        )
        candidates.append(MapCandidate(
            smooth_map=smooth_map,
            seed=seed,
            feat_cost=cost,
            cluster_pair=cluster_pair,
        ))
    candidates.sort(key=lambda c: c.feat_cost)
    return candidates[:top_m]
