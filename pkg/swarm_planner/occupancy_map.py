"""Box-obstacle workspace, radius-inflated free-space queries and voxel grids.

Free space is closed: a point of a radius-r agent is free when its distance to
every obstacle is at least r and the r-ball stays inside the bounds.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from swarm_planner.consts import GEOMETRY_TOL
from swarm_planner.exceptions import MapFormatError, UnreachableError
from swarm_planner.json_utils import read_json_file, write_json_file

Point = Tuple[float, float, float]
GridIndex = Tuple[int, int, int]


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box [lower, upper] in meters."""
    lower: Point
    upper: Point

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))

    @classmethod
    def from_points(cls, *points) -> "Box":
        stacked = np.asarray(points, dtype=float).reshape(-1, 3)
        return cls(tuple(stacked.min(axis=0)), tuple(stacked.max(axis=0)))

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    def shrunk(self, r: float) -> "Box":
        return Box(tuple(self.lo + r), tuple(self.hi - r))

    def contains(self, p, tol: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lo - tol) and np.all(p <= self.hi + tol))

    def intersects(self, other: "Box") -> bool:
        return bool(np.all(self.lo <= other.hi) and np.all(other.lo <= self.hi))

    def to_dict(self) -> Dict[str, List[float]]:
        return {"min": list(self.lower), "max": list(self.upper)}


def point_box_distance(points, lo, hi) -> np.ndarray:
    """Euclidean distance from point(s) to a closed box (0 inside)."""
    points = np.asarray(points, dtype=float)
    gap = np.maximum(np.maximum(lo - points, points - hi), 0.0)
    return np.linalg.norm(gap, axis=-1)


def box_box_distance(lo_a, hi_a, lo_b, hi_b) -> np.ndarray:
    """Euclidean distance between closed boxes; broadcasts over the b boxes."""
    gap = np.maximum(np.maximum(np.asarray(lo_b) - hi_a, np.asarray(lo_a) - hi_b), 0.0)
    return np.linalg.norm(gap, axis=-1)


def segment_box_distance(a, b, lo, hi) -> float:
    """
    Exact distance between the segment <a, b> and a closed box.

    The squared distance along the segment is piecewise quadratic with
    breakpoints where a coordinate crosses a box face; each piece is
    minimised in closed form.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    direction = b - a
    breaks = [0.0, 1.0]
    for axis in range(3):
        if direction[axis] != 0.0:
            for face in (lo[axis], hi[axis]):
                s = (face - a[axis]) / direction[axis]
                if 0.0 < s < 1.0:
                    breaks.append(s)
    breaks = sorted(breaks)
    best = float(point_box_distance(a, lo, hi))
    for s0, s1 in zip(breaks[:-1], breaks[1:]):
        if s1 <= s0:
            continue
        mid = a + 0.5 * (s0 + s1) * direction
        # each axis is either inside the slab or clamped to one face on this piece
        target = np.clip(mid, lo, hi)
        active = (mid < lo) | (mid > hi)
        quad = float(np.sum(direction[active] ** 2))
        lin = float(np.sum((a - target)[active] * direction[active]))
        s = s0 if quad == 0.0 else min(max(-lin / quad, s0), s1)
        best = min(best, float(point_box_distance(a + s * direction, lo, hi)))
        best = min(best, float(point_box_distance(a + s1 * direction, lo, hi)))
    return best


@dataclass(frozen=True)
class OccupancyWorld:
    """Axis-aligned workspace with box obstacles."""
    bounds: Box
    obstacles: Tuple[Box, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if np.any(self.bounds.extent <= 0):
            raise MapFormatError(f"bounds must have positive extent on every axis, got {self.bounds}")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def obstacle_lo(self) -> np.ndarray:
        return np.array([box.lower for box in self.obstacles]).reshape(-1, 3)

    @property
    def obstacle_hi(self) -> np.ndarray:
        return np.array([box.upper for box in self.obstacles]).reshape(-1, 3)

    def clearance(self, points) -> np.ndarray:
        """Distance from point(s) to the nearest obstacle (inf without obstacles)."""
        points = np.asarray(points, dtype=float)
        if not self.obstacles:
            return np.full(points.shape[:-1], np.inf)
        distances = point_box_distance(points[..., None, :], self.obstacle_lo, self.obstacle_hi)
        return distances.min(axis=-1)

    def box_clearance(self, lo, hi) -> np.ndarray:
        """Distance from box(es) [lo, hi] to the nearest obstacle; a lattice edge is a degenerate box."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if not self.obstacles:
            return np.full(lo.shape[:-1], np.inf)
        distances = box_box_distance(lo[..., None, :], hi[..., None, :], self.obstacle_lo, self.obstacle_hi)
        return distances.min(axis=-1)


def box_is_free(world: OccupancyWorld, box: Box, r: float, tol: float = 0.0) -> bool:
    """
    True iff the box inflated by a radius-r sphere avoids every obstacle and
    stays inside the bounds.
    """
    if not world.bounds.shrunk(r).contains(box.lo, tol) or not world.bounds.shrunk(r).contains(box.hi, tol):
        return False
    if not world.obstacles:
        return True
    distances = box_box_distance(box.lo, box.hi, world.obstacle_lo, world.obstacle_hi)
    return bool(np.all(distances >= r - tol))


def is_segment_free(world: OccupancyWorld, a, b, r: float) -> bool:
    """
    Checks the capsule swept by a radius-r sphere along <a, b> against the
    world.

    Args:
        world (OccupancyWorld): The workspace.
        a, b: Segment end points in meters.
        r (float): Agent radius in meters.

    Returns:
        bool: True if the capsule stays in free space.
    """
    inner = world.bounds.shrunk(r)
    if not inner.contains(a) or not inner.contains(b):
        return False
    for box in world.obstacles:
        if segment_box_distance(a, b, box.lo, box.hi) < r:
            return False
    return True


def world_to_dict(world: OccupancyWorld) -> Dict[str, Any]:
    return {
        "bounds": world.bounds.to_dict(),
        "obstacles": [box.to_dict() for box in world.obstacles],
    }


def _parse_box(data: Any, where: str) -> Box:
    if not isinstance(data, dict):
        raise MapFormatError(f"{where}: expected an object with 'min' and 'max'")
    corners = []
    for key in ("min", "max"):
        value = data.get(key)
        if not isinstance(value, list) or len(value) != 3 or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise MapFormatError(f"{where}.{key}: expected a list of 3 numbers, got {value!r}")
        corners.append(value)
    box = Box(tuple(corners[0]), tuple(corners[1]))
    if np.any(box.lo > box.hi):
        raise MapFormatError(f"{where}: min {corners[0]} exceeds max {corners[1]}")
    return box


def world_from_dict(data: Any, source: str = "<world>") -> OccupancyWorld:
    """
    Builds a world from its JSON representation.

    Raises:
        MapFormatError: On schema violations or non-positive bounds extent.
    """
    if not isinstance(data, dict):
        raise MapFormatError(f"{source}: top level must be an object")
    bounds = _parse_box(data.get("bounds"), f"{source}: bounds")
    if np.any(bounds.extent <= 0):
        raise MapFormatError(f"{source}: bounds must have positive extent, got {bounds.to_dict()}")
    raw_obstacles = data.get("obstacles", [])
    if not isinstance(raw_obstacles, list):
        raise MapFormatError(f"{source}: obstacles must be a list")
    obstacles = []
    for index, raw in enumerate(raw_obstacles):
        box = _parse_box(raw, f"{source}: obstacles[{index}]")
        if not box.intersects(bounds):
            logging.warning(f"{source}: obstacles[{index}] lies outside the bounds and is ignored")
            continue
        obstacles.append(box)
    return OccupancyWorld(bounds, tuple(obstacles))


def load_world(path: str) -> OccupancyWorld:
    """
    Reads a world from a JSON map file.

    Args:
        path (str): File with {"bounds": {"min", "max"}, "obstacles": [...]}.

    Returns:
        OccupancyWorld: The parsed world.

    Raises:
        MapFormatError: If the file cannot be read, does not parse or violates the schema.
    """
    try:
        data = read_json_file(path)
    except (OSError, ValueError) as e:
        raise MapFormatError(str(e)) from e
    world = world_from_dict(data, path)
    logging.info(f"Loaded world {path} with {len(world.obstacles)} obstacles.")
    return world


def save_world(world: OccupancyWorld, path: str) -> None:
    write_json_file(world_to_dict(world), path)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Lattice of candidate positions with per-agent-radius blocking.

    Attributes:
        origin (np.ndarray): Position of lattice index (0, 0, 0).
        cell_size (float): Lattice spacing d in meters.
        dims (Tuple[int, int, int]): Number of lattice points per axis.
        blocked (np.ndarray): Boolean array of shape dims.
        radius (float): Agent radius the blocking was computed for.
        edge_blocked (np.ndarray, optional): Boolean array of shape (3, *dims);
            entry [axis][index] marks the move from index to index + e_axis as
            blocked. None means every edge between free points is usable.
    """
    origin: np.ndarray
    cell_size: float
    dims: GridIndex
    blocked: np.ndarray
    radius: float = 0.0
    edge_blocked: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        blocked = np.asarray(self.blocked, dtype=bool)
        if blocked.shape != self.dims:
            raise MapFormatError(f"blocked mask shape {blocked.shape} does not match dims {self.dims}")
        object.__setattr__(self, "blocked", blocked)
        if self.edge_blocked is not None:
            edges = np.asarray(self.edge_blocked, dtype=bool)
            if edges.shape != (3,) + self.dims:
                raise MapFormatError(f"edge mask shape {edges.shape} does not match (3, *{self.dims})")
            object.__setattr__(self, "edge_blocked", edges)

    def edge_free(self, index: GridIndex, axis: int, step: int) -> bool:
        """True if the unit move from index along +-axis avoids the inflated obstacles."""
        if self.edge_blocked is None:
            return True
        base = list(index)
        if step < 0:
            base[axis] -= 1
        return not self.edge_blocked[axis][tuple(base)]

    def position(self, index: GridIndex) -> np.ndarray:
        return self.origin + self.cell_size * np.asarray(index, dtype=float)

    def in_grid(self, index: GridIndex) -> bool:
        return all(0 <= i < n for i, n in zip(index, self.dims))

    def is_free(self, index: GridIndex) -> bool:
        return self.in_grid(index) and not self.blocked[index]

    @property
    def free_count(self) -> int:
        return int(np.count_nonzero(~self.blocked))

    def lattice_points(self) -> np.ndarray:
        axes = [self.origin[a] + self.cell_size * np.arange(self.dims[a]) for a in range(3)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack(grid, axis=-1)


def build_grid(world: OccupancyWorld, d: float, r: float) -> VoxelGrid:
    """
    Derives the lattice of grid size d covering the bounds (both boundary
    planes included) and blocks every point whose radius-r ball leaves free
    space.

    Args:
        world (OccupancyWorld): The workspace.
        d (float): Grid size in meters.
        r (float): Agent radius in meters.

    Returns:
        VoxelGrid: The blocked lattice.

    Raises:
        MapFormatError: If d is not positive or exceeds the smallest extent.
    """
    if d <= 0:
        raise MapFormatError(f"grid size must be positive, got {d}")
    extent = world.bounds.extent
    if d > extent.min():
        raise MapFormatError(f"grid size {d} exceeds the smallest bounds extent {extent.min()}")
    dims = tuple(int(math.floor(e / d + GEOMETRY_TOL)) + 1 for e in extent)
    grid = VoxelGrid(world.bounds.lo, d, dims, np.zeros(dims, dtype=bool), r)
    points = grid.lattice_points()
    inner = world.bounds.shrunk(r)
    outside = np.any(points < inner.lo - GEOMETRY_TOL, axis=-1) | np.any(points > inner.hi + GEOMETRY_TOL, axis=-1)
    blocked = outside | (world.clearance(points) < r)
    # an axis-aligned edge is the box it spans
    edges = np.zeros((3,) + dims, dtype=bool)
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = d
        edges[axis] = world.box_clearance(points, points + step) < r
    logging.debug(f"Grid {dims} at d={d}, r={r}: {int(blocked.sum())} blocked points, "
                  f"{int(edges.sum())} blocked edges.")
    return VoxelGrid(world.bounds.lo, d, dims, blocked, r, edges)


def snap_to_grid(grid: VoxelGrid, p) -> GridIndex:
    """
    Returns the nearest unblocked lattice point, ties broken by index order.

    Args:
        grid (VoxelGrid): The lattice.
        p: Point in meters.

    Returns:
        GridIndex: The chosen lattice index.

    Raises:
        UnreachableError: If p is out of the grid or no free point lies within 2d.
    """
    p = np.asarray(p, dtype=float)
    upper = grid.position(tuple(n - 1 for n in grid.dims))
    if np.any(p < grid.origin - GEOMETRY_TOL) or np.any(p > upper + GEOMETRY_TOL):
        raise UnreachableError(f"point {p.tolist()} lies outside the grid")
    base = np.floor((p - grid.origin) / grid.cell_size).astype(int)
    candidates = []
    for offset in np.ndindex(6, 6, 6):
        index = tuple(int(v) for v in base + np.array(offset) - 2)
        if not grid.is_free(index):
            continue
        distance = float(np.linalg.norm(grid.position(index) - p))
        if distance <= 2 * grid.cell_size + GEOMETRY_TOL:
            candidates.append((round(distance, 12), index))
    if not candidates:
        raise UnreachableError(f"no free lattice point within {2 * grid.cell_size} m of {p.tolist()}")
    return min(candidates)[1]


def grid_neighbors(grid: VoxelGrid, index: GridIndex) -> List[GridIndex]:
    """Free 6-connected neighbours of a lattice index reachable over an unblocked edge."""
    neighbors = []
    for axis in range(3):
        for step in (1, -1):
            candidate = list(index)
            candidate[axis] += step
            candidate = tuple(candidate)
            if grid.is_free(candidate) and grid.edge_free(index, axis, step):
                neighbors.append(candidate)
    return neighbors


def points_free(world: OccupancyWorld, points: Sequence, r: float, tol: float = 0.0) -> np.ndarray:
    """Vectorised point free-space test used by validators and scenarios."""
    points = np.asarray(points, dtype=float)
    inner = world.bounds.shrunk(r)
    inside = np.all(points >= inner.lo - tol, axis=-1) & np.all(points <= inner.hi + tol, axis=-1)
    return inside & (world.clearance(points) >= r - tol)
