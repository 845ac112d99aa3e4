"""Combinatorial selection of per-cluster maps and global map merging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .pointops import farthest_point_sample
from .smoothmap import SmoothMap, fit_tps


def distortion_cost(
    map_a: SmoothMap,
    map_b: SmoothMap,
    cluster_a_points: np.ndarray,
    cluster_b_points: np.ndarray,
    n_pairs: int = 64,
    seed: int = 0,
) -> float:
    """Mean absolute change of sampled inter-cluster distances.

    Point pairs are drawn with a generator seeded from ``seed`` so repeated
    evaluations (and cache lookups) are reproducible.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF]))
    ia = rng.integers(0, cluster_a_points.shape[0], size=n_pairs)
    ib = rng.integers(0, cluster_b_points.shape[0], size=n_pairs)
    p = cluster_a_points[ia]
    q = cluster_b_points[ib]
    before = np.linalg.norm(p - q, axis=1)
    after = np.linalg.norm(map_a(p) - map_b(q), axis=1)
    return float(np.mean(np.abs(after - before)))


def navigability_cost(
    smooth_map: SmoothMap,
    traj_points: np.ndarray,
    navigable_xz_tree: cKDTree,
    delta: float = 0.25,
) -> float:
    """Fraction of warped trajectory points outside the navigable region.

    A point counts as navigable when its warped XZ position lies within
    ``delta`` of some navigable XZ point. Empty input costs nothing.
    """
    if traj_points.shape[0] == 0:
        return 0.0
    warped = smooth_map(traj_points)
    d, _ = navigable_xz_tree.query(warped[:, [0, 2]])
    return float(1.0 - np.mean(d <= delta))


@dataclass(frozen=True)
class Assignment:
    """One smooth-map choice per active target cluster with its cost split."""

    choices: dict                 # target cluster -> candidate index
    feat: float
    distort: float
    nav: float
    total: float
    beam_rank: int = 0


class AssemblyCosts:
    """Precomputed per-candidate costs plus a pairwise distortion memo."""

    def __init__(self, candidates: dict, cluster_points: dict,
                 traj_by_cluster: dict, navigable_xz_tree: cKDTree,
                 nav_delta: float, distortion_pairs: int, seed: int):
        self.candidates = candidates
        self.cluster_points = cluster_points
        self.distortion_pairs = distortion_pairs
        self.seed = seed
        self.feat = {}
        self.nav = {}
        self._distort = {}
        for k, cands in candidates.items():
            traj_k = traj_by_cluster.get(k, np.zeros((0, 3)))
            for idx, cand in enumerate(cands):
                self.feat[(k, idx)] = cand.feat_cost
                self.nav[(k, idx)] = navigability_cost(
                    cand.smooth_map, traj_k, navigable_xz_tree, nav_delta
                )

    def distort(self, ka: int, ia: int, kb: int, ib: int) -> float:
        if ka > kb:
            ka, ia, kb, ib = kb, ib, ka, ia
        key = (ka, ia, kb, ib)
        if key not in self._distort:
            pair_seed = (self.seed * 1000003 + ka * 1009 + kb) & 0x7FFFFFFF
            self._distort[key] = distortion_cost(
                self.candidates[ka][ia].smooth_map,
                self.candidates[kb][ib].smooth_map,
                self.cluster_points[ka],
                self.cluster_points[kb],
                self.distortion_pairs,
                pair_seed,
            )
        return self._distort[key]


def beam_search(
    candidates: dict,
    cluster_points: dict,
    traj_by_cluster: dict,
    navigable_xz_tree: cKDTree,
    lambda_feat: float = 1.0,
    lambda_distort: float = 1.0,
    lambda_nav: float = 1.0,
    beam_width: int = 5,
    nav_delta: float = 0.25,
    distortion_pairs: int = 64,
    seed: int = 0,
) -> tuple:
    """Select one candidate per cluster minimizing the assembly cost.

    Clusters are processed in descending point-count order. Each beam state
    carries accumulated feature, navigability and pairwise distortion sums;
    only the ``beam_width`` cheapest extensions survive a step. Returns
    (assignments sorted by total cost, warnings).
    """
    warnings = []
    active = [k for k, c in candidates.items() if len(c) > 0]
    skipped = [k for k, c in candidates.items() if len(c) == 0]
    for k in skipped:
        warnings.append(f"cluster {k} has no map candidates; skipped in assembly")
    if not active:
        raise ValueError("no cluster has map candidates")
    order = sorted(active, key=lambda k: (-cluster_points[k].shape[0], k))

    costs = AssemblyCosts(
        {k: candidates[k] for k in active},
        cluster_points,
        traj_by_cluster,
        navigable_xz_tree,
        nav_delta,
        distortion_pairs,
        seed,
    )

    # Beam states: (choices tuple aligned with `order` prefix, feat, nav, distort)
    beam = [((), 0.0, 0.0, 0.0)]
    for k in order:
        extended = []
        for choices, feat, nav, distort in beam:
            for idx in range(len(candidates[k])):
                new_feat = feat + costs.feat[(k, idx)]
                new_nav = nav + costs.nav[(k, idx)]
                new_distort = distort
                for prev_k, prev_idx in zip(order, choices):
                    new_distort += costs.distort(prev_k, prev_idx, k, idx)
                extended.append((choices + (idx,), new_feat, new_nav, new_distort))
        extended.sort(key=lambda st: (
            lambda_feat * st[1] + lambda_nav * st[2] + lambda_distort * st[3],
            st[0],
        ))
        beam = extended[:beam_width]

    assignments = []
    for rank, (choices, feat, nav, distort) in enumerate(beam):
        total = lambda_feat * feat + lambda_distort * distort + lambda_nav * nav
        assignments.append(Assignment(
            choices={k: idx for k, idx in zip(order, choices)},
            feat=feat,
            distort=distort,
            nav=nav,
            total=total,
            beam_rank=rank,
        ))
    return assignments, warnings


def merge_global_map(
    assignment: Assignment,
    candidates: dict,
    cluster_points: dict,
    per_cluster_samples: int = 100,
    tps_lambda_scale: float = 1e-3,
) -> SmoothMap:
    """Fit one scene-wide TPS through samples of all selected cluster maps.

    Each selected map contributes a farthest-point subsample of its cluster
    paired with the warped images; the union becomes the control set of the
    global map.
    """
    sources = []
    targets = []
    for k, idx in sorted(assignment.choices.items()):
        pts = cluster_points[k]
        sel = farthest_point_sample(pts, per_cluster_samples)
        src = pts[sel]
        sources.append(src)
        targets.append(candidates[k][idx].smooth_map(src))
    src = np.vstack(sources)
    tgt = np.vstack(targets)
    bbox_diag = float(np.linalg.norm(src.max(axis=0) - src.min(axis=0)))
    return fit_tps(src, tgt, tps_lambda_scale * bbox_diag)
