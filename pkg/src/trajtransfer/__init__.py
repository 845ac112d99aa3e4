"""Analogical trajectory transfer between instance-labeled 3D scenes."""

from .config import PipelineConfig, load_config, make_config, save_config
from .pipeline import TransferResult, run_transfer
from .scene_io import (
    Scene,
    Trajectory,
    load_scene,
    load_trajectory,
    navigable_points,
    save_scene,
    save_trajectory,
    voxel_downsample,
)
from .synth import SynthPair, SynthSpec, generate_pair, generate_trajectory

__all__ = [
    "PipelineConfig",
    "Scene",
    "SynthPair",
    "SynthSpec",
    "Trajectory",
    "TransferResult",
    "generate_pair",
    "generate_trajectory",
    "load_config",
    "load_scene",
    "load_trajectory",
    "make_config",
    "navigable_points",
    "run_transfer",
    "save_config",
    "save_scene",
    "save_trajectory",
    "voxel_downsample",
]

__version__ = "0.1.0"
