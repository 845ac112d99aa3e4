"""Object-level graph construction, clustering, and region propagation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import cdist

from .scene_io import OPEN_SPACE, Scene, normalize_features


@dataclass(frozen=True)
class ObjectGraph:
    """One node per object instance; fully connected distance-weighted edges.

    ``edge_lengths[a, b]`` holds the Euclidean distance between the centroids
    of nodes a and b (zero on the diagonal).
    """

    instance_ids: np.ndarray   # (V,) int32, sorted ascending
    centroids: np.ndarray      # (V, 3)
    features: np.ndarray       # (V, D) unit rows, renormalized member means
    point_indices: list        # per node: int array of member scene points
    edge_lengths: np.ndarray   # (V, V) symmetric

    @property
    def n_nodes(self) -> int:
        return self.instance_ids.shape[0]


@dataclass(frozen=True)
class Clustering:
    """Cluster ids for every graph node and (optionally) every scene point."""

    node_cluster: np.ndarray        # (V,) int32 in [0, C)
    centroids: np.ndarray           # (C, 3) mean of member node centroids
    point_cluster: np.ndarray | None = None  # (N,) int32, dense labeling

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def nodes_of(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.node_cluster == cluster)


def build_object_graph(scene: Scene) -> ObjectGraph:
    """Aggregate scene points into per-instance nodes.

    Node centroid is the mean member position; node feature is the
    renormalized mean of member features.
    """
    ids = np.unique(scene.instance_id)
    ids = ids[ids != OPEN_SPACE]
    if ids.size == 0:
        raise ValueError("scene has no object instances")
    centroids = np.empty((ids.size, 3))
    feats = np.empty((ids.size, scene.feature_dim))
    members = []
    for row, inst in enumerate(ids):
        idx = np.flatnonzero(scene.instance_id == inst)
        members.append(idx)
        centroids[row] = scene.points[idx].mean(axis=0)
        feats[row] = scene.features[idx].mean(axis=0)
    feats = normalize_features(feats)
    edges = cdist(centroids, centroids)
    return ObjectGraph(
        instance_ids=ids.astype(np.int32),
        centroids=centroids,
        features=feats,
        point_indices=members,
        edge_lengths=edges,
    )


def cluster_count(n_nodes: int, target_size: int) -> int:
    return max(1, int(np.floor(n_nodes / target_size + 0.5)))


def cluster_objects(graph: ObjectGraph, target_size: int) -> Clustering:
    """Ward-linkage agglomerative clustering of node centroids.

    The number of clusters is max(1, round(V / target_size)). Labels are
    relabeled by order of first appearance over node index, so the result is
    deterministic given the input node order.
    """
    if target_size < 1:
        raise ValueError("target_size must be >= 1")
    v = graph.n_nodes
    c = min(cluster_count(v, target_size), v)
    if v == 1 or c == 1:
        labels = np.zeros(v, dtype=np.int32)
    else:
        merge_tree = linkage(graph.centroids, method="ward")
        raw = fcluster(merge_tree, t=c, criterion="maxclust")
        remap: dict[int, int] = {}
        labels = np.empty(v, dtype=np.int32)
        for i, lab in enumerate(raw):
            if lab not in remap:
                remap[lab] = len(remap)
            labels[i] = remap[lab]
    n_clusters = int(labels.max()) + 1
    centers = np.empty((n_clusters, 3))
    for k in range(n_clusters):
        centers[k] = graph.centroids[labels == k].mean(axis=0)
    return Clustering(node_cluster=labels, centroids=centers)


def propagate_regions(scene: Scene, graph: ObjectGraph, clustering: Clustering) -> Clustering:
    """Extend node cluster ids to a dense per-point labeling.

    Object points inherit their instance node's cluster; open-space points
    take the nearest cluster centroid (ties break toward the smaller id).
    """
    point_cluster = np.full(scene.n_points, -1, dtype=np.int32)
    for node, idx in enumerate(graph.point_indices):
        point_cluster[idx] = clustering.node_cluster[node]
    open_mask = scene.instance_id == OPEN_SPACE
    if np.any(open_mask):
        d = cdist(scene.points[open_mask], clustering.centroids)
        # argmin returns the first minimum, i.e. the smaller cluster id on ties
        point_cluster[open_mask] = np.argmin(d, axis=1).astype(np.int32)
    return Clustering(
        node_cluster=clustering.node_cluster,
        centroids=clustering.centroids,
        point_cluster=point_cluster,
    )
