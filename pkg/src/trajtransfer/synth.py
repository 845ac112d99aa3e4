"""Synthetic scene pairs with known ground-truth maps and trajectories.

Stands in for real scan datasets: box-shaped objects grouped into spatial
clusters on a rectangular floor, with features built from shared per-instance
identity vectors plus a smooth local-context component, so every
feature-dependent stage of the pipeline can be exercised offline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import plan
from .pointops import farthest_point_sample
from .scene_io import OPEN_SPACE, Scene, Trajectory, navigable_points


class PlacementError(RuntimeError):
    """Raised when rejection sampling cannot place the requested objects."""


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic scene pair."""

    room_extent: tuple = (9.0, 11.0)     # (x, z) meters, centered at origin
    n_objects: int = 12
    n_clusters: int = 3
    object_size: tuple = (0.45, 0.8)     # footprint edge range, meters
    object_height: tuple = (0.4, 1.0)
    feature_dim: int = 24
    seed: int = 0
    # Perturbation family: y-rotation quarter turns, optional x-flip,
    # uniform scale, per-cluster XZ translation jitter, point noise.
    rotation_quarters: int | None = None   # None: drawn from {0, 1, 2, 3}
    mirror: bool | None = None             # None: drawn uniformly
    scale: float | None = None             # None: drawn from scale_range
    scale_range: tuple = (0.8, 1.25)
    cluster_jitter: float = 0.3            # meters, max XZ magnitude
    point_noise: float = 0.005             # meters
    # Sampling densities and layout margins
    floor_spacing: float = 0.13
    surface_spacing: float = 0.1
    wall_margin: float = 2.2
    group_radius: float = 1.6
    group_separation: float = 4.2
    gap_same_cluster: float = 0.7
    gap_other_cluster: float = 1.0
    # Feature structure
    identity_mix: float = 0.7              # identity vs local-context weight
    duplicate_share: int = 2               # objects per cluster sharing identity
    n_waypoints: int = 5
    # Grid used for internal A* planning (matched to floor density)
    plan_resolution: float = 0.15
    plan_inflation: float = 0.2


@dataclass(frozen=True)
class SynthPair:
    """Generated pair plus everything needed to verify a transfer."""

    scene_tgt: Scene
    scene_ref: Scene
    src_trajectory: Trajectory
    gt_trajectory_ref: Trajectory
    group_centers: np.ndarray        # (C, 3) target-frame cluster centers
    global_linear: np.ndarray        # (3, 3) scale * mirror * rotation
    cluster_offsets: np.ndarray      # (C, 3) per-cluster jitter
    params: dict = field(default_factory=dict)

    def gt_map(self, x: np.ndarray) -> np.ndarray:
        """Exact correspondence: global similarity plus nearest-cluster jitter."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d = np.linalg.norm(
            x[:, None, [0, 2]] - self.group_centers[None, :, [0, 2]], axis=2
        )
        nearest = np.argmin(d, axis=1)
        return x @ self.global_linear.T + self.cluster_offsets[nearest]


def _global_linear(quarters: int, mirror: bool, scale: float) -> np.ndarray:
    angle = quarters * np.pi / 2.0
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    flip = np.diag([-1.0, 1.0, 1.0]) if mirror else np.eye(3)
    return scale * (flip @ rot)


def _sample_separated(rng, count, bounds, min_dist, restarts=200, attempts=200):
    for _ in range(restarts):
        chosen = []
        for _ in range(attempts):
            cand = rng.uniform(bounds[0], bounds[1])
            if all(np.linalg.norm(cand - c) >= min_dist for c in chosen):
                chosen.append(cand)
                if len(chosen) == count:
                    return np.array(chosen)
    raise PlacementError(f"could not place {count} separated group centers")


def _box_surface_points(center, size_xz, height, spacing, rng):
    """Points on the four side faces and the top face of a box on the floor."""
    hx, hz = size_xz[0] / 2.0, size_xz[1] / 2.0
    pts = []
    n_y = max(2, int(np.ceil(height / spacing)) + 1)
    ys = np.linspace(0.0, height, n_y)
    for sign in (-1.0, 1.0):
        n_a = max(2, int(np.ceil(size_xz[1] / spacing)) + 1)
        zs = np.linspace(-hz, hz, n_a)
        g = np.stack(np.meshgrid(zs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
        pts.append(np.column_stack([np.full(g.shape[0], sign * hx), g[:, 1], g[:, 0]]))
        n_b = max(2, int(np.ceil(size_xz[0] / spacing)) + 1)
        xs = np.linspace(-hx, hx, n_b)
        g = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
        pts.append(np.column_stack([g[:, 0], g[:, 1], np.full(g.shape[0], sign * hz)]))
    n_x = max(2, int(np.ceil(size_xz[0] / spacing)) + 1)
    n_z = max(2, int(np.ceil(size_xz[1] / spacing)) + 1)
    top = np.stack(np.meshgrid(
        np.linspace(-hx, hx, n_x), np.linspace(-hz, hz, n_z), indexing="ij"
    ), axis=-1).reshape(-1, 2)
    pts.append(np.column_stack([top[:, 0], np.full(top.shape[0], height), top[:, 1]]))
    out = np.unique(np.round(np.vstack(pts), 6), axis=0)
    return out + np.array([center[0], 0.0, center[1]])


def _footprint_gap(center_a, size_a, center_b, size_b) -> float:
    # XZ gap between two axis-aligned rectangles (negative if overlapping).
    d = np.abs(np.asarray(center_a) - np.asarray(center_b))
    half = (np.asarray(size_a) + np.asarray(size_b)) / 2.0
    sep = d - half
    if sep[0] <= 0 and sep[1] <= 0:
        return float(max(sep[0], sep[1]))
    return float(np.linalg.norm(np.maximum(sep, 0.0)))


def _inside_convex(poly_xz: np.ndarray, pts_xz: np.ndarray) -> np.ndarray:
    inside = np.ones(pts_xz.shape[0], dtype=bool)
    n = poly_xz.shape[0]
    for i in range(n):
        a = poly_xz[i]
        b = poly_xz[(i + 1) % n]
        edge = b - a
        rel = pts_xz - a
        cross = edge[0] * rel[:, 1] - edge[1] * rel[:, 0]
        inside &= cross >= -1e-9
    return inside


def _open_space_profile(dist: np.ndarray, basis: np.ndarray) -> np.ndarray:
    h = np.stack([np.exp(-dist / 0.5), np.exp(-dist / 1.5)], axis=1)
    ctx = h @ basis.T
    norms = np.linalg.norm(ctx, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    return ctx / norms


def generate_pair(spec: SynthSpec) -> SynthPair:
    """Build a target scene, its perturbed reference, and oracle trajectories."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed & 0xFFFFFFFF, 0x5C111]))
    ex, ez = spec.room_extent
    d = spec.feature_dim

    quarters = spec.rotation_quarters
    if quarters is None:
        quarters = int(rng.integers(0, 4))
    mirror = spec.mirror
    if mirror is None:
        mirror = bool(rng.integers(0, 2))
    scale = spec.scale
    if scale is None:
        scale = float(rng.uniform(*spec.scale_range))
    global_linear = _global_linear(quarters, mirror, scale)

    # Cluster layout and box placement in the target frame.
    margin = spec.wall_margin
    bounds = (np.array([-ex / 2 + margin, -ez / 2 + margin]),
              np.array([ex / 2 - margin, ez / 2 - margin]))
    centers_xz = _sample_separated(rng, spec.n_clusters, bounds, spec.group_separation)

    counts = np.full(spec.n_clusters, spec.n_objects // spec.n_clusters)
    counts[: spec.n_objects % spec.n_clusters] += 1

    boxes = []  # (cluster, center_xz, size_xz, height)
    for k in range(spec.n_clusters):
        placed = 0
        for _ in range(1000):
            if placed == counts[k]:
                break
            size = rng.uniform(spec.object_size[0], spec.object_size[1], size=2)
            height = float(rng.uniform(*spec.object_height))
            offset = rng.uniform(-spec.group_radius, spec.group_radius, size=2)
            if np.linalg.norm(offset) > spec.group_radius:
                continue
            center = centers_xz[k] + offset
            if np.any(center - size / 2 < bounds[0] - margin + 1.0) or \
                    np.any(center + size / 2 > bounds[1] + margin - 1.0):
                continue
            ok = True
            for (other_k, oc, osz, _h) in boxes:
                need = spec.gap_same_cluster if other_k == k else spec.gap_other_cluster
                if _footprint_gap(center, size, oc, osz) < need:
                    ok = False
                    break
            if ok:
                boxes.append((k, center, size, height))
                placed += 1
        if placed != counts[k]:
            raise PlacementError(f"could not place {counts[k]} objects in cluster {k}")

    # Feature machinery shared across the pair: orthonormal identity vectors,
    # a linear local-context map, and an open-space distance profile.
    identity_basis = np.linalg.qr(rng.standard_normal((d, d)))[0].T
    open_vec = identity_basis[0]
    ctx_map = rng.standard_normal((d, 3))
    ctx_map /= np.linalg.norm(ctx_map)
    open_basis = rng.standard_normal((d, 2))

    identity_of = np.empty(spec.n_objects, dtype=np.int64)
    next_identity = 1  # index 0 reserved for open space
    for k in range(spec.n_clusters):
        members = [i for i, b in enumerate(boxes) if b[0] == k]
        shared = members[: min(spec.duplicate_share, len(members))]
        for i in shared:
            identity_of[i] = next_identity
        next_identity += 1
        for i in members[len(shared):]:
            identity_of[i] = next_identity
            next_identity += 1
    if next_identity > d:
        raise PlacementError("feature_dim too small for the number of identities")

    def _ctx(points: np.ndarray, group_center_xz: np.ndarray) -> np.ndarray:
        rel = points - np.array([group_center_xz[0], 0.0, group_center_xz[1]])
        ctx = rel @ ctx_map.T
        norms = np.linalg.norm(ctx, axis=1, keepdims=True)
        norms[norms < 1e-12] = 1.0
        return ctx / norms

    mix = spec.identity_mix
    obj_points = []
    obj_ids = []
    obj_feats = []
    obj_cluster = []
    for inst, (k, center, size, height) in enumerate(boxes):
        pts = _box_surface_points(center, size, height, spec.surface_spacing, rng)
        feats = mix * identity_basis[identity_of[inst]] + (1 - mix) * _ctx(pts, centers_xz[k])
        obj_points.append(pts)
        obj_ids.append(np.full(pts.shape[0], inst, dtype=np.int32))
        obj_feats.append(feats)
        obj_cluster.append(np.full(pts.shape[0], k, dtype=np.int64))
    obj_points = np.vstack(obj_points)
    obj_ids = np.concatenate(obj_ids)
    obj_feats = np.vstack(obj_feats)
    obj_cluster = np.concatenate(obj_cluster)

    obj_tree_xz = cKDTree(obj_points[:, [0, 2]])

    def _floor(poly_xz: np.ndarray, obstacle_tree: cKDTree) -> np.ndarray:
        lo = poly_xz.min(axis=0)
        hi = poly_xz.max(axis=0)
        xs = np.arange(lo[0] + spec.floor_spacing / 2, hi[0], spec.floor_spacing)
        zs = np.arange(lo[1] + spec.floor_spacing / 2, hi[1], spec.floor_spacing)
        grid = np.stack(np.meshgrid(xs, zs, indexing="ij"), axis=-1).reshape(-1, 2)
        grid = grid[_inside_convex(poly_xz, grid)]
        dist, _ = obstacle_tree.query(grid)
        grid = grid[dist > 0.1]
        return np.column_stack([grid[:, 0], np.zeros(grid.shape[0]), grid[:, 1]])

    room_poly = np.array([
        [-ex / 2, -ez / 2], [ex / 2, -ez / 2], [ex / 2, ez / 2], [-ex / 2, ez / 2]
    ])
    tgt_floor = _floor(room_poly, obj_tree_xz)
    tgt_floor_dist, _ = obj_tree_xz.query(tgt_floor[:, [0, 2]])
    tgt_floor_feats = (
        mix * open_vec + (1 - mix) * _open_space_profile(tgt_floor_dist, open_basis)
    )

    scene_tgt = Scene(
        points=np.vstack([obj_points, tgt_floor]),
        instance_id=np.concatenate([
            obj_ids, np.full(tgt_floor.shape[0], OPEN_SPACE, dtype=np.int32)
        ]),
        features=np.vstack([obj_feats, tgt_floor_feats]),
    )

    # Reference scene: per-cluster similarity images of the object points,
    # with fresh floor sampled over the transformed room.
    offsets = np.zeros((spec.n_clusters, 3))
    ang = rng.uniform(0.0, 2.0 * np.pi, size=spec.n_clusters)
    rad = spec.cluster_jitter * np.sqrt(rng.uniform(0.0, 1.0, size=spec.n_clusters))
    offsets[:, 0] = rad * np.cos(ang)
    offsets[:, 2] = rad * np.sin(ang)

    ref_obj_points = obj_points @ global_linear.T + offsets[obj_cluster]
    if spec.point_noise > 0:
        ref_obj_points = ref_obj_points + rng.normal(0.0, spec.point_noise, ref_obj_points.shape)
    ref_obj_tree_xz = cKDTree(ref_obj_points[:, [0, 2]])

    ref_poly3 = np.column_stack([room_poly[:, 0], np.zeros(4), room_poly[:, 1]]) @ global_linear.T
    ref_poly = ref_poly3[:, [0, 2]]
    if mirror:  # keep vertex order counter-clockwise for the convexity test
        ref_poly = ref_poly[::-1]
    ref_floor = _floor(ref_poly, ref_obj_tree_xz)
    # Pull floor positions back to the target frame so the distance profile
    # matches corresponding locations across the pair.
    inv = np.linalg.inv(global_linear)
    ref_floor_back = ref_floor @ inv.T
    ref_floor_dist, _ = obj_tree_xz.query(ref_floor_back[:, [0, 2]])
    ref_floor_feats = (
        mix * open_vec + (1 - mix) * _open_space_profile(ref_floor_dist, open_basis)
    )

    scene_ref = Scene(
        points=np.vstack([ref_obj_points, ref_floor]),
        instance_id=np.concatenate([
            obj_ids, np.full(ref_floor.shape[0], OPEN_SPACE, dtype=np.int32)
        ]),
        features=np.vstack([obj_feats, ref_floor_feats]),
    )

    group_centers = np.column_stack([
        centers_xz[:, 0], np.zeros(spec.n_clusters), centers_xz[:, 1]
    ])
    pair = SynthPair(
        scene_tgt=scene_tgt,
        scene_ref=scene_ref,
        src_trajectory=None,
        gt_trajectory_ref=None,
        group_centers=group_centers,
        global_linear=global_linear,
        cluster_offsets=offsets,
        params={
            "seed": spec.seed,
            "rotation_quarters": quarters,
            "mirror": mirror,
            "scale": scale,
            "n_objects": spec.n_objects,
            "n_clusters": spec.n_clusters,
        },
    )

    src_traj = generate_trajectory(
        scene_tgt, spec.n_waypoints, spec.seed,
        resolution=spec.plan_resolution, inflation=spec.plan_inflation,
    )
    gt_waypoints = pair.gt_map(src_traj.points[src_traj.waypoint_indices])
    ref_grid = plan.build_grid(scene_ref, spec.plan_resolution, spec.plan_inflation)
    gt_traj = plan.plan_through(ref_grid, gt_waypoints)

    return SynthPair(
        scene_tgt=scene_tgt,
        scene_ref=scene_ref,
        src_trajectory=src_traj,
        gt_trajectory_ref=gt_traj,
        group_centers=group_centers,
        global_linear=global_linear,
        cluster_offsets=offsets,
        params=pair.params,
    )


def generate_trajectory(
    scene: Scene,
    n_waypoints: int,
    seed: int,
    resolution: float = 0.15,
    inflation: float = 0.2,
) -> Trajectory:
    """Waypoints by farthest-point sampling over navigable space, linked by A*.

    The arbitrary FPS seed point is dropped before the chain continues, so
    two waypoints reduce to (approximately) the diameter pair of the
    navigable set.
    """
    if n_waypoints < 2:
        raise ValueError("need at least 2 waypoints")
    nav = navigable_points(scene)
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x17A9]))
    start = int(rng.integers(0, nav.shape[0]))
    # Double sweep: farthest point from the arbitrary start becomes the
    # first waypoint, then greedy FPS continues from there.
    first = int(np.argmax(np.linalg.norm(nav - nav[start], axis=1)))
    idx = farthest_point_sample(nav, n_waypoints, start=first)
    waypoints = nav[idx]
    grid = plan.build_grid(scene, resolution, inflation)
    return plan.plan_through(grid, waypoints)
