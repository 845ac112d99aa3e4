"""Scene and trajectory containers plus their binary file formats.

Scenes are stored in the "ATTS" format, trajectories in "ATTT". Both are
little-endian with IEEE-754 binary32 floats:

    ATTS: magic "ATTS", u32 version=1, u64 N, u32 D,
          N x 3 f32 positions, N i32 instance ids, N x D f32 features
    ATTT: magic "ATTT", u32 version=1, u64 M,
          M x 3 f32 positions, u32 W, W u64 waypoint indices

Writer and reader agree bit-exactly; reloading a file written by
``save_scene`` reproduces the same bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

SCENE_MAGIC = b"ATTS"
TRAJ_MAGIC = b"ATTT"
FORMAT_VERSION = 1

# Instance id of open-space (navigable) points.
OPEN_SPACE = -1

_UNIT_NORM_TOL = 1e-6


class FormatError(ValueError):
    """Raised for malformed or truncated ATTS/ATTT files."""


def normalize_features(features: np.ndarray) -> np.ndarray:
    """Scale every row to unit Euclidean norm.

    Rows already within 1e-6 of unit norm are left untouched so that a
    load/save round trip is byte-stable. Zero-norm rows raise ValueError.
    """
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("zero-norm feature vector")
    out = features.copy()
    off = np.abs(norms - 1.0) > _UNIT_NORM_TOL
    if np.any(off):
        out[off] = features[off] / norms[off, None]
    return out


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Scene:
    """Point cloud with per-point instance labels and unit feature vectors.

    ``instance_id`` is -1 for open space and >= 0 for object instances.
    Arrays are read-only after construction; scenes can be shared freely
    across workers.
    """

    points: np.ndarray        # (N, 3) float64, meters
    instance_id: np.ndarray   # (N,) int32
    features: np.ndarray      # (N, D) float64, unit rows
    voxel_size: float | None = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        ids = np.asarray(self.instance_id, dtype=np.int32)
        feats = np.asarray(self.features, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError("points must have shape (N, 3)")
        n = points.shape[0]
        if n < 1:
            raise ValueError("scene must contain at least one point")
        if ids.shape != (n,):
            raise ValueError("instance_id length does not match points")
        if feats.ndim != 2 or feats.shape[0] != n or feats.shape[1] < 1:
            raise ValueError("features must have shape (N, D >= 1)")
        if not np.all(np.isfinite(points)) or not np.all(np.isfinite(feats)):
            raise ValueError("non-finite values in scene arrays")
        feats = normalize_features(feats)
        object.__setattr__(self, "points", _freeze(points))
        object.__setattr__(self, "instance_id", _freeze(ids))
        object.__setattr__(self, "features", _freeze(feats))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Trajectory:
    """Ordered 3D polyline, optionally with waypoint indices.

    Waypoint indices, when present, are strictly increasing, start at 0 and
    end at the last point. Consecutive points are never identical.
    """

    points: np.ndarray                     # (M, 3) float64, meters
    waypoint_indices: np.ndarray | None = None  # (W,) int64 or None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 2:
            raise ValueError("trajectory needs at least 2 points of shape (M, 3)")
        if not np.all(np.isfinite(points)):
            raise ValueError("non-finite trajectory points")
        seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
        if np.any(seg == 0.0):
            raise ValueError("consecutive trajectory points must be distinct")
        object.__setattr__(self, "points", _freeze(points))
        if self.waypoint_indices is not None:
            wp = np.asarray(self.waypoint_indices, dtype=np.int64)
            m = points.shape[0]
            if wp.ndim != 1 or wp.size < 2:
                raise ValueError("waypoint_indices needs at least 2 entries")
            if wp[0] != 0 or wp[-1] != m - 1 or np.any(np.diff(wp) <= 0):
                raise ValueError("waypoint_indices must strictly increase from 0 to M-1")
            object.__setattr__(self, "waypoint_indices", _freeze(wp))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    def waypoints(self) -> np.ndarray:
        if self.waypoint_indices is None:
            raise ValueError("trajectory carries no waypoint indices")
        return self.points[self.waypoint_indices]


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}")
    return data


def load_scene(path) -> Scene:
    """Read an ATTS file. Features are L2-normalized on load."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != SCENE_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {SCENE_MAGIC!r}")
        version, = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported ATTS version {version}")
        n, = struct.unpack("<Q", _read_exact(fh, 8, "point count"))
        d, = struct.unpack("<I", _read_exact(fh, 4, "feature dim"))
        if n == 0:
            raise FormatError("scene with zero points")
        if d == 0:
            raise FormatError("scene with zero feature dimension")
        pts = np.frombuffer(_read_exact(fh, 12 * n, "positions"), dtype="<f4").reshape(n, 3)
        ids = np.frombuffer(_read_exact(fh, 4 * n, "instance ids"), dtype="<i4")
        feats = np.frombuffer(_read_exact(fh, 4 * n * d, "features"), dtype="<f4").reshape(n, d)
        if fh.read(1):
            raise FormatError("trailing bytes after scene payload")
    return Scene(points=pts, instance_id=ids, features=feats)


def save_scene(scene: Scene, path) -> None:
    """Write an ATTS file (positions and features stored as f32)."""
    with open(path, "wb") as fh:
        fh.write(SCENE_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", scene.n_points))
        fh.write(struct.pack("<I", scene.feature_dim))
        fh.write(scene.points.astype("<f4").tobytes())
        fh.write(scene.instance_id.astype("<i4").tobytes())
        fh.write(scene.features.astype("<f4").tobytes())


def load_trajectory(path) -> Trajectory:
    """Read an ATTT file."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != TRAJ_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {TRAJ_MAGIC!r}")
        version, = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported ATTT version {version}")
        m, = struct.unpack("<Q", _read_exact(fh, 8, "point count"))
        if m < 2:
            raise FormatError("trajectory with fewer than 2 points")
        pts = np.frombuffer(_read_exact(fh, 12 * m, "positions"), dtype="<f4").reshape(m, 3)
        w, = struct.unpack("<I", _read_exact(fh, 4, "waypoint count"))
        wp = None
        if w > 0:
            wp = np.frombuffer(_read_exact(fh, 8 * w, "waypoint indices"), dtype="<u8").astype(np.int64)
        if fh.read(1):
            raise FormatError("trailing bytes after trajectory payload")
    return Trajectory(points=pts, waypoint_indices=wp)


def save_trajectory(traj: Trajectory, path) -> None:
    """Write an ATTT file (positions stored as f32)."""
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", traj.n_points))
        fh.write(traj.points.astype("<f4").tobytes())
        wp = traj.waypoint_indices
        if wp is None:
            fh.write(struct.pack("<I", 0))
        else:
            fh.write(struct.pack("<I", wp.size))
            fh.write(wp.astype("<u8").tobytes())


def voxel_downsample(scene: Scene, voxel: float) -> Scene:
    """Merge points falling into the same cubic voxel.

    Each occupied voxel contributes one point: the centroid of its members,
    the majority instance label (ties break toward the smallest id) and the
    renormalized mean of member features.
    """
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    keys = np.floor(scene.points / voxel).astype(np.int64)
    # Lexicographic grouping of voxel keys; order of first appearance kept.
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    n_vox = uniq.shape[0]

    pos = np.zeros((n_vox, 3))
    counts = np.bincount(inverse, minlength=n_vox).astype(np.float64)
    for axis in range(3):
        pos[:, axis] = np.bincount(inverse, weights=scene.points[:, axis], minlength=n_vox)
    pos /= counts[:, None]

    feats = np.zeros((n_vox, scene.feature_dim))
    for axis in range(scene.feature_dim):
        feats[:, axis] = np.bincount(inverse, weights=scene.features[:, axis], minlength=n_vox)
    feats /= counts[:, None]
    norms = np.linalg.norm(feats, axis=1)
    degenerate = norms < 1e-12
    if np.any(degenerate):
        # Mean of opposing unit vectors can cancel; fall back to the feature
        # of the first member point of that voxel.
        first_member = np.full(n_vox, -1, dtype=np.int64)
        for idx in range(scene.n_points - 1, -1, -1):
            first_member[inverse[idx]] = idx
        feats[degenerate] = scene.features[first_member[degenerate]]

    ids = np.empty(n_vox, dtype=np.int32)
    order = np.lexsort((scene.instance_id, inverse))
    sorted_vox = inverse[order]
    sorted_ids = scene.instance_id[order]
    start = 0
    for v in range(n_vox):
        end = start
        while end < sorted_vox.size and sorted_vox[end] == v:
            end += 1
        labels, label_counts = np.unique(sorted_ids[start:end], return_counts=True)
        # np.unique sorts labels ascending, argmax takes the first maximum,
        # so ties already resolve to the smallest id.
        ids[v] = labels[np.argmax(label_counts)]
        start = end
    return Scene(points=pos, instance_id=ids, features=feats, voxel_size=voxel)


def navigable_points(scene: Scene) -> np.ndarray:
    """Return the open-space points (instance id -1), order preserved.

    Raises ValueError when the scene has no open space, since such a scene
    cannot serve as a transfer reference.
    """
    mask = scene.instance_id == OPEN_SPACE
    if not np.any(mask):
        raise ValueError("scene has no navigable (open-space) points")
    return scene.points[mask]
