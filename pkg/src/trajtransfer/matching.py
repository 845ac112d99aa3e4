"""Cross-scene node matching and cluster-level assignment selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .graph import Clustering, ObjectGraph

_MASKED = -1e15


def build_affinity(g_tgt: ObjectGraph, g_ref: ObjectGraph, eps: float = 1e-3) -> np.ndarray:
    """Pairwise-match compatibility matrix of size (Nt*Nr) x (Nt*Nr).

    Index pq = p * Nr + q. Diagonal entries score feature agreement of the
    single match (p, q), shifted by +1 so cosine similarity lands in [0, 2].
    Off-diagonal entries score joint geometric compatibility of (p, q) and
    (p', q') as the inverse absolute difference of the two edge lengths;
    conflicting pairs (sharing exactly one endpoint) are zeroed.
    """
    nt, nr = g_tgt.n_nodes, g_ref.n_nodes
    cos = g_tgt.features @ g_ref.features.T            # (nt, nr)
    et = g_tgt.edge_lengths                            # (nt, nt)
    er = g_ref.edge_lengths                            # (nr, nr)

    # |e_pp' - e_qq'| arranged as (p, q, p', q')
    diff = np.abs(et[:, None, :, None] - er[None, :, None, :])
    K = 1.0 / (diff + eps)

    p_idx = np.arange(nt)
    q_idx = np.arange(nr)
    same_p = p_idx[:, None, None, None] == p_idx[None, None, :, None]
    same_q = q_idx[None, :, None, None] == q_idx[None, None, None, :]
    K[same_p ^ same_q] = 0.0
    K[same_p & same_q] = 0.0
    K = K.reshape(nt * nr, nt * nr)
    K[np.arange(nt * nr), np.arange(nt * nr)] = (1.0 + cos).ravel()
    return K


def _power_iteration(K: np.ndarray, max_iter: int = 200, tol: float = 1e-9) -> tuple[np.ndarray, bool]:
    n = K.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(max_iter):
        nxt = K @ v
        norm = np.linalg.norm(nxt)
        if norm == 0:
            return v, False
        nxt /= norm
        if np.linalg.norm(nxt - v) < tol:
            return nxt, True
        v = nxt
    return v, False


def sinkhorn(x: np.ndarray, sweeps: int = 10) -> np.ndarray:
    """Alternating column/row normalization; final rows sum to one."""
    x = x.copy()
    for _ in range(sweeps):
        col = x.sum(axis=0, keepdims=True)
        col[col == 0] = 1.0
        x /= col
        row = x.sum(axis=1, keepdims=True)
        row[row == 0] = 1.0
        x /= row
    return x


def match_graphs(K: np.ndarray, n_tgt: int, n_ref: int) -> tuple[np.ndarray, bool]:
    """Soft node assignment from the principal eigenvector of the affinity.

    Power iteration from a uniform positive start vector (200 iterations or
    relative change below 1e-9), reshape to (n_tgt, n_ref), then 10 Sinkhorn
    sweeps. Returns (X_assign, converged); a non-convergent iteration still
    yields its best iterate.
    """
    v, converged = _power_iteration(K)
    x = np.abs(v).reshape(n_tgt, n_ref)
    return sinkhorn(x), converged


def soft_assignment(g_tgt: ObjectGraph, g_ref: ObjectGraph, eps: float = 1e-3) -> tuple[np.ndarray, bool]:
    """Full node-matching step: affinity then spectral soft assignment."""
    K = build_affinity(g_tgt, g_ref, eps)
    return match_graphs(K, g_tgt.n_nodes, g_ref.n_nodes)


def aggregate_clusters(x_assign: np.ndarray, cl_tgt: Clustering, cl_ref: Clustering) -> np.ndarray:
    """Cluster-level match scores from node-level soft assignments.

    Entry (i, j) is the maximum total assignment weight over injective
    matchings between the node sets of target cluster i and reference
    cluster j, solved exactly as a max-weight bipartite matching of size
    min(|i|, |j|).
    """
    ct, cr = cl_tgt.n_clusters, cl_ref.n_clusters
    x_inter = np.zeros((ct, cr))
    for i in range(ct):
        rows = cl_tgt.nodes_of(i)
        for j in range(cr):
            cols = cl_ref.nodes_of(j)
            sub = x_assign[np.ix_(rows, cols)]
            r_idx, c_idx = linear_sum_assignment(sub, maximize=True)
            x_inter[i, j] = sub[r_idx, c_idx].sum()
    return x_inter


@dataclass(frozen=True)
class ClusterMatch:
    target_cluster: int
    reference_cluster: int
    score: float
    rank: int


@dataclass(frozen=True)
class ClusterMatchSet:
    """Top-K reference-cluster choices per target cluster plus merges.

    ``merged`` maps low-confidence target clusters to the absorbing target
    cluster whose match list they inherit.
    """

    matches: list                 # list[ClusterMatch]
    merged: dict = field(default_factory=dict)

    def for_cluster(self, target_cluster: int) -> list:
        owner = self.merged.get(target_cluster, target_cluster)
        return [m for m in self.matches if m.target_cluster == owner]

    @property
    def active_clusters(self) -> list:
        return sorted({m.target_cluster for m in self.matches})


def select_top_k(
    x_inter: np.ndarray,
    k: int,
    merge_threshold: float,
    cluster_centroids_tgt: np.ndarray,
) -> ClusterMatchSet:
    """Rank-ordered cluster assignments via repeated Hungarian solves.

    Rank 1 is the max-weight assignment on X_inter; later ranks re-solve
    with each target cluster's previously chosen reference masked out.
    Target clusters whose rank-1 score falls below ``merge_threshold`` merge
    into the spatially nearest unmerged target cluster.
    """
    ct, cr = x_inter.shape
    work = x_inter.astype(np.float64).copy()
    per_cluster: dict[int, list[ClusterMatch]] = {i: [] for i in range(ct)}
    for rank in range(k):
        rows, cols = linear_sum_assignment(work, maximize=True)
        found = False
        for i, j in zip(rows, cols):
            if work[i, j] <= _MASKED / 2:
                continue
            per_cluster[i].append(ClusterMatch(int(i), int(j), float(x_inter[i, j]), rank))
            work[i, j] = _MASKED
            found = True
        if not found:
            break

    rank1 = {i: per_cluster[i][0].score for i in range(ct) if per_cluster[i]}
    keep = [i for i, s in rank1.items() if s >= merge_threshold]
    if not keep:
        # Everything below threshold: keep the single best-scoring cluster.
        if rank1:
            keep = [max(rank1, key=lambda i: (rank1[i], -i))]
        else:
            raise ValueError("no cluster matches found")
    merged: dict[int, int] = {}
    for i in range(ct):
        if i in keep:
            continue
        d = np.linalg.norm(cluster_centroids_tgt[keep] - cluster_centroids_tgt[i], axis=1)
        merged[i] = int(np.array(keep)[np.argmin(d)])
    matches = [m for i in keep for m in per_cluster[i]]
    return ClusterMatchSet(matches=matches, merged=merged)
