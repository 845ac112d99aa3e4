"""Occupancy-grid A* planning over the navigable space of a scene."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .scene_io import OPEN_SPACE, Scene, Trajectory

SQRT2 = math.sqrt(2.0)


class PlanningError(RuntimeError):
    """Raised when no path exists or snapping fails."""


@dataclass(frozen=True)
class OccupancyGrid:
    """Boolean XZ grid over the navigable bounding box.

    A cell is free iff at least one navigable point falls inside it and no
    object point lies within ``inflation`` of its center. Planned points are
    emitted at ``height_y``.
    """

    origin: np.ndarray      # (2,) XZ of cell (0, 0) corner
    resolution: float
    free: np.ndarray        # (nx, nz) bool
    height_y: float
    inflation: float

    @property
    def shape(self) -> tuple:
        return self.free.shape

    def cell_of(self, xz: np.ndarray) -> tuple:
        ij = np.floor((np.asarray(xz) - self.origin) / self.resolution).astype(int)
        ij = np.clip(ij, 0, np.array(self.free.shape) - 1)
        return int(ij[0]), int(ij[1])

    def center_of(self, cell: tuple) -> np.ndarray:
        xz = self.origin + (np.asarray(cell, dtype=np.float64) + 0.5) * self.resolution
        return np.array([xz[0], self.height_y, xz[1]])


def build_grid(scene: Scene, resolution: float = 0.1, inflation: float = 0.2) -> OccupancyGrid:
    """Discretize the scene's navigable space into an occupancy grid."""
    nav_mask = scene.instance_id == OPEN_SPACE
    if not np.any(nav_mask):
        raise PlanningError("scene has no navigable points")
    nav = scene.points[nav_mask]
    obstacles = scene.points[~nav_mask]

    nav_xz = nav[:, [0, 2]]
    lo = nav_xz.min(axis=0)
    hi = nav_xz.max(axis=0)
    nx = int(np.floor((hi[0] - lo[0]) / resolution)) + 1
    nz = int(np.floor((hi[1] - lo[1]) / resolution)) + 1

    cells = np.floor((nav_xz - lo) / resolution).astype(int)
    cells[:, 0] = np.clip(cells[:, 0], 0, nx - 1)
    cells[:, 1] = np.clip(cells[:, 1], 0, nz - 1)
    occupied = np.zeros((nx, nz), dtype=bool)
    occupied[cells[:, 0], cells[:, 1]] = True

    free = occupied
    if obstacles.shape[0] > 0:
        ii, jj = np.meshgrid(np.arange(nx), np.arange(nz), indexing="ij")
        centers = lo + (np.stack([ii.ravel(), jj.ravel()], axis=1) + 0.5) * resolution
        obs_tree = cKDTree(obstacles[:, [0, 2]])
        d, _ = obs_tree.query(centers)
        blocked = (d < inflation).reshape(nx, nz)
        free = occupied & ~blocked
    if not np.any(free):
        raise PlanningError("occupancy grid has no free cells")
    return OccupancyGrid(
        origin=lo,
        resolution=resolution,
        free=free,
        height_y=float(np.median(nav[:, 1])),
        inflation=inflation,
    )


def snap_to_free(grid: OccupancyGrid, point: np.ndarray, max_radius: float = 1.0) -> tuple:
    """Nearest free cell via expanding ring search around the point's cell."""
    ci, cj = grid.cell_of(np.asarray(point)[[0, 2]])
    nx, nz = grid.shape
    max_rings = int(math.ceil(max_radius / grid.resolution))
    for ring in range(max_rings + 1):
        best = None
        for di in range(-ring, ring + 1):
            for dj in range(-ring, ring + 1):
                if max(abs(di), abs(dj)) != ring:
                    continue
                i, j = ci + di, cj + dj
                if 0 <= i < nx and 0 <= j < nz and grid.free[i, j]:
                    d = di * di + dj * dj
                    cand = (d, i, j)
                    if best is None or cand < best:
                        best = cand
        if best is not None:
            return best[1], best[2]
    raise PlanningError(f"no free cell within {max_radius} m of {point}")


_MOVES = (
    (-1, 0, False), (1, 0, False), (0, -1, False), (0, 1, False),
    (-1, -1, True), (-1, 1, True), (1, -1, True), (1, 1, True),
)


def _component_size(grid: OccupancyGrid, start: tuple) -> int:
    # Flood fill over free cells (4-connectivity is enough for a size hint).
    nx, nz = grid.shape
    seen = {start}
    stack = [start]
    while stack:
        i, j = stack.pop()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = i + di, j + dj
            if 0 <= ni < nx and 0 <= nj < nz and grid.free[ni, nj] and (ni, nj) not in seen:
                seen.add((ni, nj))
                stack.append((ni, nj))
    return len(seen)


def astar_cells(grid: OccupancyGrid, start: tuple, goal: tuple) -> tuple:
    """Optimal 8-connected cell path; returns (cells, straight, diagonal).

    Costs are tracked as integer counts of straight and diagonal moves so
    path cost comparisons are exact (1 and sqrt(2) are incommensurable).
    Diagonal moves require both adjacent orthogonal cells to be free.
    """
    nx, nz = grid.shape
    free = grid.free

    def g_value(counts):
        return counts[0] + counts[1] * SQRT2

    def heuristic(cell):
        return math.hypot(cell[0] - goal[0], cell[1] - goal[1])

    best: dict[tuple, tuple] = {start: (0, 0)}
    parent: dict[tuple, tuple] = {}
    counter = 0
    heap = [(heuristic(start), counter, start, (0, 0))]
    closed = set()
    while heap:
        _, _, cell, counts = heapq.heappop(heap)
        if cell in closed:
            continue
        closed.add(cell)
        if cell == goal:
            path = [cell]
            while path[-1] != start:
                path.append(parent[path[-1]])
            path.reverse()
            return path, counts[0], counts[1]
        i, j = cell
        for di, dj, diagonal in _MOVES:
            ni, nj = i + di, j + dj
            if not (0 <= ni < nx and 0 <= nj < nz) or not free[ni, nj]:
                continue
            if diagonal and not (free[i + di, j] and free[i, j + dj]):
                continue  # no corner cutting
            ncounts = (counts[0] + (0 if diagonal else 1), counts[1] + (1 if diagonal else 0))
            known = best.get((ni, nj))
            if known is not None and g_value(known) <= g_value(ncounts):
                continue
            best[(ni, nj)] = ncounts
            parent[(ni, nj)] = cell
            counter += 1
            heapq.heappush(heap, (g_value(ncounts) + heuristic((ni, nj)), counter, (ni, nj), ncounts))
    size_start = _component_size(grid, start)
    size_goal = _component_size(grid, goal)
    raise PlanningError(
        f"no path: start component has {size_start} cells, goal component has {size_goal} cells"
    )


def astar(grid: OccupancyGrid, start: np.ndarray, goal: np.ndarray,
          snap_radius: float = 1.0) -> np.ndarray:
    """Plan between two 3D points; returns cell-center points at grid height.

    Start and goal snap to their nearest free cells first. The returned path
    cost is optimal for the 8-connected metric (straight 1, diagonal
    sqrt(2), scaled by resolution).
    """
    s = snap_to_free(grid, start, snap_radius)
    g = snap_to_free(grid, goal, snap_radius)
    cells, _, _ = astar_cells(grid, s, g)
    return np.array([grid.center_of(c) for c in cells])


def path_cost(grid: OccupancyGrid, start: np.ndarray, goal: np.ndarray,
              snap_radius: float = 1.0) -> float:
    """Metric cost of the optimal path between two points."""
    s = snap_to_free(grid, start, snap_radius)
    g = snap_to_free(grid, goal, snap_radius)
    _, straight, diagonal = astar_cells(grid, s, g)
    return (straight + diagonal * SQRT2) * grid.resolution


def plan_through(grid: OccupancyGrid, waypoints: np.ndarray,
                 snap_radius: float = 1.0) -> Trajectory:
    """Chain A* segments through an ordered waypoint list.

    Duplicate joints between consecutive segments are dropped;
    ``waypoint_indices`` marks the snapped waypoint positions in the result.
    """
    waypoints = np.atleast_2d(np.asarray(waypoints, dtype=np.float64))
    if waypoints.shape[0] < 2:
        raise ValueError("plan_through needs at least 2 waypoints")
    points = []
    joints = [0]
    for a in range(waypoints.shape[0] - 1):
        try:
            seg = astar(grid, waypoints[a], waypoints[a + 1], snap_radius)
        except PlanningError as exc:
            raise PlanningError(f"segment {a} -> {a + 1} failed: {exc}") from exc
        if points:
            if np.array_equal(points[-1], seg[0]):
                seg = seg[1:]
            if seg.shape[0] == 0:
                # Start and goal snapped to the same cell; keep the joint.
                joints.append(len(points) - 1)
                continue
        points.extend(seg)
        joints.append(len(points) - 1)
    pts = np.array(points)
    if pts.shape[0] < 2:
        raise PlanningError("planned path collapsed to a single cell")
    wp = np.unique(np.array(joints, dtype=np.int64))
    return Trajectory(points=pts, waypoint_indices=wp)
