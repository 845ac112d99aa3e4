"""End-to-end trajectory transfer: matching, map assembly, refinement."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import assembly, graph, matching, plan, refine, smoothmap
from .config import PipelineConfig, config_dict
from .scene_io import Scene, Trajectory, navigable_points, voxel_downsample


class PipelineError(RuntimeError):
    """A stage of the transfer pipeline failed; message names the stage."""


@dataclass
class TransferResult:
    trajectory: Trajectory
    alternatives: list = field(default_factory=list)
    report: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)   # wall-clock, not in report


def _ordered_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _cluster_tables(match_set: matching.ClusterMatchSet) -> list:
    rows = []
    for m in sorted(match_set.matches, key=lambda m: (m.target_cluster, m.rank)):
        rows.append({
            "target_cluster": m.target_cluster,
            "reference_cluster": m.reference_cluster,
            "rank": m.rank,
            "score": round(m.score, 9),
        })
    return rows


def run_transfer(
    scene_tgt: Scene,
    scene_ref: Scene,
    trajectory: Trajectory,
    config: PipelineConfig | None = None,
    mode: str = "dense",
    top_n: int = 1,
) -> TransferResult:
    """Transfer ``trajectory`` from the target scene into the reference scene.

    ``mode`` is "dense" (warp and refine every point) or "waypoint" (warp and
    refine the waypoints, then re-plan between them). ``top_n`` > 1 adds
    alternative outputs built from lower-ranked assembly assignments.
    """
    cfg = (config or PipelineConfig()).validate()
    if mode not in ("dense", "waypoint"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "waypoint" and trajectory.waypoint_indices is None:
        raise ValueError("waypoint mode requires a trajectory with waypoint_indices")
    warnings: list[str] = []
    timings: dict[str, float] = {}

    def _stage(name):
        timings[name] = time.perf_counter()

    def _stage_done(name):
        timings[name] = (time.perf_counter() - timings[name]) * 1000.0

    # Voxelize both scenes and check the reference is navigable.
    _stage("preprocess")
    try:
        tgt = voxel_downsample(scene_tgt, cfg.voxel_size)
        ref = voxel_downsample(scene_ref, cfg.voxel_size)
        nav_ref = navigable_points(ref)
    except ValueError as exc:
        raise PipelineError(f"preprocess: {exc}") from exc
    _stage_done("preprocess")

    _stage("graph")
    try:
        g_tgt = graph.build_object_graph(tgt)
        g_ref = graph.build_object_graph(ref)
        cl_tgt = graph.propagate_regions(
            tgt, g_tgt, graph.cluster_objects(g_tgt, cfg.cluster_target_size))
        cl_ref = graph.propagate_regions(
            ref, g_ref, graph.cluster_objects(g_ref, cfg.cluster_target_size))
    except ValueError as exc:
        raise PipelineError(f"graph: {exc}") from exc
    _stage_done("graph")

    _stage("matching")
    x_assign, converged = matching.soft_assignment(g_tgt, g_ref, cfg.affinity_eps)
    if not converged:
        warnings.append("power iteration did not converge; using best iterate")
    x_inter = matching.aggregate_clusters(x_assign, cl_tgt, cl_ref)
    threshold = cfg.merge_threshold_ratio * float(x_inter.max())
    match_set = matching.select_top_k(
        x_inter, cfg.top_k_cluster_matches, threshold, cl_tgt.centroids)
    for src_cluster, absorber in sorted(match_set.merged.items()):
        warnings.append(f"low-confidence cluster {src_cluster} merged into {absorber}")
    _stage_done("matching")

    # Fold merged target clusters into their absorbers so their points share
    # the absorber's candidate maps and appear in the global fit.
    point_cluster = cl_tgt.point_cluster.copy()
    for src_cluster, absorber in match_set.merged.items():
        point_cluster[point_cluster == src_cluster] = absorber
    active = match_set.active_clusters

    _stage("candidates")
    ref_scene_tree = cKDTree(ref.points)
    cluster_points: dict[int, np.ndarray] = {}
    cluster_features: dict[int, np.ndarray] = {}
    for k in active:
        idx = np.flatnonzero(point_cluster == k)
        cluster_points[k] = tgt.points[idx]
        cluster_features[k] = tgt.features[idx]
    ref_cluster_cache: dict[int, tuple] = {}

    def _ref_cluster(j: int) -> tuple:
        if j not in ref_cluster_cache:
            idx = np.flatnonzero(cl_ref.point_cluster == j)
            pts = ref.points[idx]
            ref_cluster_cache[j] = (pts, ref.features[idx], cKDTree(pts))
        return ref_cluster_cache[j]

    def _fit_for_match(m: matching.ClusterMatch):
        ref_pts, ref_feats, ref_tree = _ref_cluster(m.reference_cluster)
        tgt_nodes = g_tgt.centroids[cl_tgt.nodes_of(m.target_cluster)]
        ref_nodes = g_ref.centroids[cl_ref.nodes_of(m.reference_cluster)]
        return smoothmap.fit_cluster_candidates(
            cluster_points[m.target_cluster],
            cluster_features[m.target_cluster],
            tgt_nodes,
            ref_pts,
            ref_feats,
            ref_nodes,
            ref.points,
            cluster_pair=(m.target_cluster, m.reference_cluster, m.rank),
            n_rotations=cfg.n_rotations,
            top_m=cfg.top_m_maps,
            seed_cap=cfg.seed_cap,
            control_budget=cfg.control_point_budget,
            tps_lambda_scale=cfg.tps_lambda_scale,
            ref_scene_tree=ref_scene_tree,
            ref_cluster_tree=ref_tree,
        )

    ordered_matches = sorted(match_set.matches, key=lambda m: (m.target_cluster, m.rank))
    for m in ordered_matches:  # warm the per-reference-cluster cache serially
        _ref_cluster(m.reference_cluster)
    fitted = _ordered_map(_fit_for_match, ordered_matches, cfg.workers)
    candidates: dict[int, list] = {k: [] for k in active}
    for m, cands in zip(ordered_matches, fitted):
        candidates[m.target_cluster].extend(cands)
    for k in active:
        if not candidates[k]:
            warnings.append(f"cluster {k} produced no candidates")
    if all(len(c) == 0 for c in candidates.values()):
        raise PipelineError("candidates: no cluster produced any smooth map")
    _stage_done("candidates")

    _stage("assembly")
    traj_cluster = _attribute_trajectory(trajectory.points, tgt.points, point_cluster)
    traj_by_cluster = {
        k: trajectory.points[traj_cluster == k] for k in active
    }
    nav_xz_tree = cKDTree(nav_ref[:, [0, 2]])
    assignments, beam_warnings = assembly.beam_search(
        candidates,
        cluster_points,
        traj_by_cluster,
        nav_xz_tree,
        lambda_feat=cfg.assembly_lambda_feat,
        lambda_distort=cfg.assembly_lambda_distort,
        lambda_nav=cfg.assembly_lambda_nav,
        beam_width=max(cfg.beam_width, top_n),
        nav_delta=cfg.nav_delta,
        distortion_pairs=cfg.distortion_pairs,
        seed=cfg.seed,
    )
    warnings.extend(beam_warnings)
    _stage_done("assembly")

    _stage("refine")
    nav_field = refine.NavigabilityField(nav_ref, cfg.kde_bandwidth)
    outputs = []
    refine_reports = []
    n_out = min(top_n, len(assignments))
    ref_grid = None
    if mode == "waypoint":
        try:
            ref_grid = plan.build_grid(ref, cfg.grid_resolution, cfg.grid_inflation)
        except plan.PlanningError as exc:
            raise PipelineError(f"refine: {exc}") from exc
    for assignment in assignments[:n_out]:
        global_map = assembly.merge_global_map(
            assignment, candidates, cluster_points,
            cfg.per_cluster_samples, cfg.tps_lambda_scale,
        )
        out_traj, diag = _transfer_one(
            trajectory, global_map, tgt, ref, nav_field, ref_grid, cfg, mode)
        outputs.append(out_traj)
        refine_reports.append(diag)
    _stage_done("refine")

    report = {
        "config": config_dict(cfg),
        "mode": mode,
        "scene_points": {"target": tgt.n_points, "reference": ref.n_points},
        "clusters": {
            "target": int(cl_tgt.n_clusters),
            "reference": int(cl_ref.n_clusters),
            "merged": {str(k): v for k, v in sorted(match_set.merged.items())},
        },
        "matching_converged": converged,
        "cluster_matches": _cluster_tables(match_set),
        "assignments": [
            {
                "beam_rank": a.beam_rank,
                "choices": {str(k): v for k, v in sorted(a.choices.items())},
                "feat": round(a.feat, 9),
                "distort": round(a.distort, 9),
                "nav": round(a.nav, 9),
                "total": round(a.total, 9),
            }
            for a in assignments
        ],
        "refinement": refine_reports,
        "warnings": warnings,
    }
    return TransferResult(
        trajectory=outputs[0],
        alternatives=outputs[1:],
        report=report,
        timings=timings,
    )


def _attribute_trajectory(traj_points, scene_points, point_cluster) -> np.ndarray:
    """Cluster id of each trajectory point via its nearest scene point."""
    _, nn = cKDTree(scene_points).query(traj_points)
    return point_cluster[nn]


def _energy_summary(diag: dict) -> dict:
    trace = diag["trace"]
    summary = {
        "failed": diag.get("failed", False),
        "best_step": diag.get("best_step", 0),
        "initial": {k: round(v, 9) for k, v in trace[0].items()},
    }
    if "final" in diag:
        summary["final"] = {k: round(v, 9) for k, v in diag["final"].items()}
    summary["trace_total"] = [round(t["total"], 9) for t in trace]
    return summary


def _transfer_one(trajectory, global_map, tgt, ref, nav_field, ref_grid, cfg, mode):
    state_kwargs = dict(
        lambda_shape=cfg.refine_lambda_shape,
        lambda_anchor=cfg.refine_lambda_anchor,
        lambda_nav=cfg.refine_lambda_nav,
        lambda_feat=cfg.refine_lambda_feat,
        feat_radius=cfg.feat_search_radius,
        sparse_count=cfg.sparse_count,
        feature_knn=cfg.feature_knn,
    )
    if mode == "dense":
        state = refine.build_refinement_state(
            trajectory.points, global_map, tgt, ref, nav_field, **state_kwargs)
        refined, diag = refine.refine(state, cfg.refine_steps, cfg.refine_lr)
        out = Trajectory(points=refined, waypoint_indices=trajectory.waypoint_indices)
        return out, _energy_summary(diag)
    refined_wp, diag = refine.transfer_waypoints(
        trajectory.waypoints(), global_map, tgt, ref, nav_field,
        steps=cfg.refine_steps, lr=cfg.refine_lr, **state_kwargs)
    try:
        out = plan.plan_through(ref_grid, refined_wp, cfg.snap_max_radius)
    except plan.PlanningError as exc:
        raise plan.PlanningError(f"waypoint planning: {exc}") from exc
    return out, _energy_summary(diag)
