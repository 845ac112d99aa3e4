"""Pipeline configuration, flat key=value config files, and seeded RNG."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, fields, replace

import numpy as np


@dataclass(frozen=True)
class PipelineConfig:
    """All tunable values of the transfer pipeline.

    Every value is echoed into run reports so a report plus the input files
    fully determines a run.
    """

    # Preprocessing
    voxel_size: float = 0.02            # meters
    # Graph and clustering
    cluster_target_size: int = 4        # objects per cluster
    # Cluster matching
    top_k_cluster_matches: int = 1
    affinity_eps: float = 1e-3          # meters, edge-length affinity stabilizer
    merge_threshold_ratio: float = 0.3  # fraction of max inter-cluster score
    # Smooth map candidates
    n_rotations: int = 4
    top_m_maps: int = 5
    seed_cap: int = 128                 # rigid seeds kept per cluster pair
    control_point_budget: int = 200     # TPS controls per cluster
    tps_lambda_scale: float = 1e-3      # TPS regularization per bbox diagonal
    # Assembly
    beam_width: int = 5
    assembly_lambda_feat: float = 1.0
    assembly_lambda_distort: float = 1.0
    assembly_lambda_nav: float = 1.0
    distortion_pairs: int = 64          # sampled point pairs per cluster pair
    nav_delta: float = 0.25             # meters, navigable proximity threshold
    per_cluster_samples: int = 100      # controls per cluster in the global map
    # Refinement
    refine_lambda_shape: float = 1.0
    refine_lambda_anchor: float = 0.1
    refine_lambda_nav: float = 1.0
    refine_lambda_feat: float = 1.0
    kde_bandwidth: float = 0.2          # meters
    feat_search_radius: float = 1.0     # meters, XZ disk for feature targets
    sparse_count: int = 50              # trajectory samples attracted by features
    refine_steps: int = 200
    refine_lr: float = 0.02
    feature_knn: int = 8                # neighbors for feature interpolation
    # Planning
    grid_resolution: float = 0.1        # meters
    grid_inflation: float = 0.2         # meters
    snap_max_radius: float = 1.0        # meters
    # Metrics
    collision_threshold: float = 0.1    # meters
    resample_count: int = 256
    inlier_thresholds: tuple = (0.75, 1.0, 1.25, 1.5, 2.0)
    # Execution
    workers: int = 1
    seed: int = 0

    def validate(self) -> "PipelineConfig":
        positive = [
            "voxel_size", "cluster_target_size", "top_k_cluster_matches",
            "affinity_eps", "n_rotations", "top_m_maps", "seed_cap",
            "control_point_budget", "beam_width", "distortion_pairs",
            "nav_delta", "per_cluster_samples", "kde_bandwidth",
            "feat_search_radius", "sparse_count", "refine_steps", "refine_lr",
            "feature_knn", "grid_resolution", "grid_inflation",
            "snap_max_radius", "collision_threshold", "resample_count",
            "workers",
        ]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"config value {name} must be positive")
        nonneg = [
            "merge_threshold_ratio", "tps_lambda_scale",
            "assembly_lambda_feat", "assembly_lambda_distort",
            "assembly_lambda_nav", "refine_lambda_shape",
            "refine_lambda_anchor", "refine_lambda_nav", "refine_lambda_feat",
        ]
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ValueError(f"config value {name} must be non-negative")
        return self


def _parse_value(raw: str):
    raw = raw.strip()
    if "," in raw:
        return tuple(_parse_value(part) for part in raw.split(","))
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_flat_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        values[key.strip()] = _parse_value(raw)
    return values


def format_flat_text(values: dict) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, (tuple, list)):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Load a config file and apply overrides; unknown keys raise."""
    with open(path, "r", encoding="utf-8") as fh:
        values = parse_flat_text(fh.read())
    if overrides:
        values.update(overrides)
    return make_config(values)


def make_config(values: dict) -> PipelineConfig:
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = replace(PipelineConfig(), **values)
    return cfg.validate()


def config_dict(cfg: PipelineConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(PipelineConfig)}


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_flat_text(config_dict(cfg)))


def stage_rng(seed: int, stage: str, *extra: int) -> np.random.Generator:
    """Deterministic per-stage generator derived from the top-level seed.

    The stage label hashes to a fixed stream id, so adding stages never
    perturbs the streams of existing ones.
    """
    key = [seed & 0xFFFFFFFF, zlib.crc32(stage.encode("utf-8"))]
    key.extend(int(e) & 0xFFFFFFFF for e in extra)
    return np.random.default_rng(np.random.SeedSequence(key))
