"""Enhanced conflict-based search (ECBS) on the voxel lattice.

The conflict test is continuous: two agents conflict at step m when their
relative straight-line motion between steps m - 1 and m enters the
downwash-stretched inter-collision ellipsoid.
"""
import heapq
import itertools
import logging
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from swarm_planner.consts import DEFAULT_C_DW, DEFAULT_ECBS_W, DEFAULT_MAPF_TIMEOUT, GEOMETRY_TOL
from swarm_planner.exceptions import MapfError, MapfTimeoutError, UnreachableError
from swarm_planner.occupancy_map import (
    Box,
    GridIndex,
    OccupancyWorld,
    VoxelGrid,
    box_is_free,
    grid_neighbors,
    is_segment_free,
    snap_to_grid,
)


class ConflictType(Enum):
    VERTEX = "vertex"
    EDGE = "edge"


@dataclass(frozen=True)
class Conflict:
    agents: Tuple[int, int]
    timestep: int
    type: ConflictType


@dataclass(frozen=True)
class Constraint:
    """Forbids `cells` (a vertex, or an edge from -> to) for one agent at `timestep`."""
    type: ConflictType
    cells: Tuple[GridIndex, ...]
    timestep: int


@dataclass(frozen=True, eq=False)
class DiscretePlan:
    """Waypoints pi_0..pi_M of one agent with uniform time indexing.

    Attributes:
        agent_id (int): Agent index.
        waypoints (np.ndarray): (M + 1, 3) positions in meters.
        cells (Tuple[Optional[GridIndex], ...]): Lattice index per waypoint,
            None for off-lattice start/goal connectors.
        cost (int): Arrival step at the goal (waits at the goal afterwards are free).
    """
    agent_id: int
    waypoints: np.ndarray
    cells: Tuple[Optional[GridIndex], ...]
    cost: int

    def __post_init__(self):
        waypoints = np.array(self.waypoints, dtype=float).reshape(-1, 3)
        waypoints.setflags(write=False)
        object.__setattr__(self, "waypoints", waypoints)
        object.__setattr__(self, "cells", tuple(self.cells))

    @property
    def makespan(self) -> int:
        return self.waypoints.shape[0] - 1


def _scale(c_dw: float) -> np.ndarray:
    return np.array([1.0, 1.0, 1.0 / c_dw])


def closest_to_origin(p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    """Closest point of segment(s) <p0, p1> to the origin (clamped projection)."""
    direction = p1 - p0
    length_sq = np.sum(direction * direction, axis=-1)
    safe = np.where(length_sq > 0.0, length_sq, 1.0)
    s = np.where(length_sq > 0.0, np.clip(-np.sum(p0 * direction, axis=-1) / safe, 0.0, 1.0), 0.0)
    return p0 + s[..., None] * direction


def relative_distance(rel0, rel1, c_dw: float) -> np.ndarray:
    """Minimum E-metric norm along relative segment(s) <rel0, rel1>."""
    scale = _scale(c_dw)
    closest = closest_to_origin(np.asarray(rel0, dtype=float) * scale, np.asarray(rel1, dtype=float) * scale)
    return np.linalg.norm(closest, axis=-1)


def relative_segment_clear(a0, a1, b0, b1, r_sum: float, c_dw: float = DEFAULT_C_DW) -> bool:
    """
    Tests constant-velocity motions a0 -> a1 and b0 -> b1 against the
    inter-collision ellipsoid p^T E p <= r_sum^2, E = diag(1, 1, 1 / c_dw^2).

    Args:
        a0, a1: Positions of the first agent at the step boundaries.
        b0, b1: Positions of the second agent at the step boundaries.
        r_sum (float): Sum of both radii in meters.
        c_dw (float): Downwash coefficient.

    Returns:
        bool: True if the relative segment stays outside the ellipsoid.
    """
    rel0 = np.asarray(b0, dtype=float) - np.asarray(a0, dtype=float)
    rel1 = np.asarray(b1, dtype=float) - np.asarray(a1, dtype=float)
    return bool(relative_distance(rel0, rel1, c_dw) > r_sum)


def find_conflicts(positions: np.ndarray, radii: Sequence[float], c_dw: float) -> List[Conflict]:
    """
    Finds every pairwise conflict of time-aligned position sequences.

    Args:
        positions (np.ndarray): (N, L, 3) positions, one row per agent.
        radii (Sequence[float]): Agent radii.
        c_dw (float): Downwash coefficient.

    Returns:
        List[Conflict]: Sorted by (timestep, agent pair).
    """
    positions = np.asarray(positions, dtype=float)
    radii = np.asarray(radii, dtype=float)
    num_agents, length, _ = positions.shape
    conflicts = []
    if length < 2:
        return conflicts
    scale = _scale(c_dw)
    for i in range(num_agents - 1):
        rel = (positions[i + 1:] - positions[i]) * scale
        r_sum = (radii[i + 1:] + radii[i])[:, None]
        closest = closest_to_origin(rel[:, :-1], rel[:, 1:])
        hit = np.linalg.norm(closest, axis=-1) <= r_sum
        end_hit = np.linalg.norm(rel[:, 1:], axis=-1) <= r_sum
        for offset, step in np.argwhere(hit):
            kind = ConflictType.VERTEX if end_hit[offset, step] else ConflictType.EDGE
            conflicts.append(Conflict((i, i + 1 + int(offset)), int(step) + 1, kind))
    conflicts.sort(key=lambda c: (c.timestep, c.agents))
    return conflicts


def pad_positions(paths: Sequence[np.ndarray], length: Optional[int] = None) -> np.ndarray:
    """Stacks position sequences, holding each final position up to `length`."""
    length = length or max(len(p) for p in paths)
    padded = np.empty((len(paths), length, 3))
    for i, path in enumerate(paths):
        padded[i, :len(path)] = path
        padded[i, len(path):] = path[-1]
    return padded


class _Node:
    __slots__ = ("cell", "t", "conflicts", "parent", "closed", "in_focal")

    def __init__(self, cell, t, conflicts, parent):
        self.cell = cell
        self.t = t
        self.conflicts = conflicts
        self.parent = parent
        self.closed = False
        self.in_focal = False


@dataclass
class _HighLevelNode:
    node_id: int
    constraints: List[Tuple[Constraint, ...]]
    paths: List[List[GridIndex]]
    costs: List[int]
    lower_bounds: List[float]
    conflicts: List[Conflict]

    @property
    def cost(self) -> int:
        return sum(self.costs)

    @property
    def lower_bound(self) -> float:
        return sum(self.lower_bounds)


class EcbsPlanner:
    """Single-use ECBS(w) solver over per-agent voxel grids.

    Args:
        grids (Sequence[VoxelGrid]): One grid per agent (same lattice, blocking per radius).
        starts (Sequence[GridIndex]): Start lattice indices.
        goals (Sequence[GridIndex]): Goal lattice indices.
        w (float): Suboptimality bound, w >= 1.
        c_dw (float): Downwash coefficient for the conflict test.
        timeout (float): Wall-clock budget in seconds.
    """

    def __init__(self, grids: Sequence[VoxelGrid], starts: Sequence[GridIndex], goals: Sequence[GridIndex],
                 w: float = DEFAULT_ECBS_W, c_dw: float = DEFAULT_C_DW, timeout: float = DEFAULT_MAPF_TIMEOUT):
        if w < 1:
            raise MapfError(f"suboptimality bound must be >= 1, got {w}")
        if not (len(grids) == len(starts) == len(goals)):
            raise MapfError("grids, starts and goals must have one entry per agent")
        reference = grids[0]
        for grid in grids[1:]:
            if grid.dims != reference.dims or grid.cell_size != reference.cell_size \
                    or not np.allclose(grid.origin, reference.origin):
                raise MapfError("all agent grids must share one lattice")
        self.grids = list(grids)
        self.starts = [tuple(s) for s in starts]
        self.goals = [tuple(g) for g in goals]
        self.w = float(w)
        self.c_dw = float(c_dw)
        self.timeout = float(timeout)
        self.radii = np.array([grid.radius for grid in grids])
        self.lattice = reference.lattice_points()
        self.num_agents = len(grids)
        self.deadline = None
        self.heuristics = [self._distance_table(i) for i in range(self.num_agents)]
        self.num_expanded = 0
        self.num_low_level_expanded = 0

    def _distance_table(self, agent: int) -> np.ndarray:
        grid = self.grids[agent]
        table = np.full(grid.dims, -1, dtype=np.int64)
        goal = self.goals[agent]
        if not grid.is_free(goal):
            raise UnreachableError(f"goal of agent {agent} is blocked", stage="mapf")
        table[goal] = 0
        queue = deque([goal])
        while queue:
            cell = queue.popleft()
            for neighbor in grid_neighbors(grid, cell):
                if table[neighbor] < 0:
                    table[neighbor] = table[cell] + 1
                    queue.append(neighbor)
        start = self.starts[agent]
        if not grid.is_free(start) or table[start] < 0:
            raise UnreachableError(f"goal of agent {agent} is not reachable from its start", stage="mapf")
        return table

    def _positions(self, path: Sequence[GridIndex]) -> np.ndarray:
        return np.array([self.lattice[cell] for cell in path])

    def _check_deadline(self):
        if time.perf_counter() > self.deadline:
            raise MapfTimeoutError(f"ECBS found no solution within {self.timeout} s", stage="mapf")

    def _low_level(self, agent: int, constraints: Sequence[Constraint],
                   paths: Sequence[Optional[List[GridIndex]]]) -> Optional[Tuple[List[GridIndex], float]]:
        """Focal A* in (cell, time) minimising arrival time, ties towards fewer conflicts."""
        grid = self.grids[agent]
        goal = self.goals[agent]
        table = self.heuristics[agent]
        vertex: Set[Tuple[GridIndex, int]] = set()
        edge: Set[Tuple[GridIndex, GridIndex, int]] = set()
        min_finish = 0
        last_constraint = 0
        for constraint in constraints:
            last_constraint = max(last_constraint, constraint.timestep)
            if constraint.type is ConflictType.VERTEX:
                vertex.add((constraint.cells[0], constraint.timestep))
                if constraint.cells[0] == goal:
                    min_finish = max(min_finish, constraint.timestep + 1)
            else:
                edge.add((constraint.cells[0], constraint.cells[1], constraint.timestep))
                if constraint.cells[0] == goal and constraint.cells[1] == goal:
                    min_finish = max(min_finish, constraint.timestep)
        start = self.starts[agent]
        if (start, 0) in vertex:
            return None

        others = [j for j, path in enumerate(paths) if j != agent and path is not None]
        if others:
            other_positions = pad_positions([self._positions(paths[j]) for j in others])
            other_radii = self.radii[others] + self.radii[agent]
        scale = _scale(self.c_dw)
        horizon = last_constraint + grid.free_count + 1

        def heuristic(cell, t):
            return max(int(table[cell]), min_finish - t)

        def count_conflicts(cell, t, candidates):
            if not others:
                return [0] * len(candidates)
            last = other_positions.shape[1] - 1
            before = other_positions[:, min(t - 1, last)] - self.lattice[cell]
            after = other_positions[:, min(t, last)][None] - self.lattice[tuple(zip(*candidates))][:, None]
            closest = closest_to_origin(np.broadcast_to(before * scale, after.shape), after * scale)
            hits = np.linalg.norm(closest, axis=-1) <= other_radii
            return hits.sum(axis=1).tolist()

        counter = itertools.count()
        nodes: Dict[Tuple[GridIndex, int], _Node] = {}
        open_heap, pending, focal = [], [], []
        root = _Node(start, 0, 0, None)
        nodes[(start, 0)] = root
        f_root = heuristic(start, 0)
        heapq.heappush(open_heap, (f_root, next(counter), (start, 0)))
        heapq.heappush(pending, (f_root, next(counter), (start, 0)))

        while True:
            while open_heap and nodes[open_heap[0][2]].closed:
                heapq.heappop(open_heap)
            if not open_heap:
                return None
            f_min = open_heap[0][0]
            bound = self.w * f_min + GEOMETRY_TOL
            while pending and pending[0][0] <= bound:
                f, _, key = heapq.heappop(pending)
                node = nodes[key]
                if node.closed:
                    continue
                node.in_focal = True
                heapq.heappush(focal, (node.conflicts, f, -node.t, next(counter), key))
            node = None
            while focal:
                conflicts, f, _, _, key = heapq.heappop(focal)
                candidate = nodes[key]
                if not candidate.closed and candidate.conflicts == conflicts:
                    node = candidate
                    break
            if node is None:
                return None
            node.closed = True
            self.num_low_level_expanded += 1
            if self.num_low_level_expanded % 2048 == 0:
                self._check_deadline()

            if node.cell == goal and node.t >= min_finish:
                path = []
                current = node
                while current is not None:
                    path.append(current.cell)
                    current = current.parent
                return path[::-1], float(f_min)
            if node.t >= horizon:
                continue

            t = node.t + 1
            successors = [node.cell] + grid_neighbors(grid, node.cell)
            successors = [
                cell for cell in successors
                if (cell, t) not in vertex and (node.cell, cell, t) not in edge
            ]
            if not successors:
                continue
            for cell, extra in zip(successors, count_conflicts(node.cell, t, successors)):
                key = (cell, t)
                conflicts = node.conflicts + extra
                existing = nodes.get(key)
                if existing is None:
                    child = _Node(cell, t, conflicts, node)
                    nodes[key] = child
                    f = t + heuristic(cell, t)
                    heapq.heappush(open_heap, (f, next(counter), key))
                    heapq.heappush(pending, (f, next(counter), key))
                elif not existing.closed and conflicts < existing.conflicts:
                    existing.conflicts = conflicts
                    existing.parent = node
                    if existing.in_focal:
                        f = t + heuristic(cell, t)
                        heapq.heappush(focal, (conflicts, f, -t, next(counter), key))

    def _conflicts_of(self, paths: Sequence[List[GridIndex]]) -> List[Conflict]:
        positions = pad_positions([self._positions(path) for path in paths])
        return find_conflicts(positions, self.radii, self.c_dw)

    @staticmethod
    def _arrival(path: Sequence[GridIndex]) -> int:
        return len(path) - 1

    def _constraint_for(self, conflict: Conflict, agent: int, path: Sequence[GridIndex]) -> Constraint:
        at = path[min(conflict.timestep, len(path) - 1)]
        if conflict.type is ConflictType.VERTEX:
            return Constraint(ConflictType.VERTEX, (at,), conflict.timestep)
        before = path[min(conflict.timestep - 1, len(path) - 1)]
        return Constraint(ConflictType.EDGE, (before, at), conflict.timestep)

    def solve(self) -> List[List[GridIndex]]:
        """
        Runs the high-level focal search over constraint trees.

        Returns:
            List[List[GridIndex]]: One lattice path per agent, unpadded.

        Raises:
            MapfError: If the instance has no solution or the starts/goals conflict.
            MapfTimeoutError: If the time budget is exhausted.
        """
        self.deadline = time.perf_counter() + self.timeout
        for label, cells in (("start", self.starts), ("goal", self.goals)):
            static = pad_positions([self._positions([cell]) for cell in cells], 2)
            if find_conflicts(static, self.radii, self.c_dw):
                raise MapfError(f"{label} positions of some agents already collide", stage="mapf")

        ids = itertools.count()
        paths: List[Optional[List[GridIndex]]] = [None] * self.num_agents
        lower_bounds = [0.0] * self.num_agents
        for agent in range(self.num_agents):
            result = self._low_level(agent, (), paths)
            if result is None:
                raise MapfError(f"no single-agent path for agent {agent}", stage="mapf")
            paths[agent], lower_bounds[agent] = result
        root = _HighLevelNode(
            next(ids),
            [() for _ in range(self.num_agents)],
            paths,
            [self._arrival(p) for p in paths],
            lower_bounds,
            self._conflicts_of(paths),
        )
        open_list = [root]
        while open_list:
            self._check_deadline()
            lb_min = min(n.lower_bound for n in open_list)
            focal = [n for n in open_list if n.cost <= self.w * lb_min + GEOMETRY_TOL]
            node = min(focal, key=lambda n: (len(n.conflicts), n.cost, n.node_id))
            open_list.remove(node)
            self.num_expanded += 1
            logging.debug(
                f"ECBS node {node.node_id}: cost {node.cost}, lb {node.lower_bound}, "
                f"{len(node.conflicts)} conflicts, open {len(open_list)}"
            )
            if not node.conflicts:
                logging.info(
                    f"ECBS solved {self.num_agents} agents: flow-time {node.cost}, "
                    f"{self.num_expanded} high-level expansions."
                )
                return node.paths

            conflict = node.conflicts[0]
            for agent in conflict.agents:
                constraint = self._constraint_for(conflict, agent, node.paths[agent])
                constraints = list(node.constraints)
                constraints[agent] = constraints[agent] + (constraint,)
                others = list(node.paths)
                others[agent] = None
                result = self._low_level(agent, constraints[agent], others)
                if result is None:
                    continue
                new_path, new_bound = result
                child_paths = list(node.paths)
                child_paths[agent] = new_path
                costs = list(node.costs)
                costs[agent] = self._arrival(new_path)
                bounds = list(node.lower_bounds)
                bounds[agent] = max(new_bound, node.lower_bounds[agent])
                open_list.append(_HighLevelNode(
                    next(ids), constraints, child_paths, costs, bounds, self._conflicts_of(child_paths)
                ))
        raise MapfError("ECBS exhausted the constraint tree without a solution", stage="mapf")


def plan_ecbs(grids: Sequence[VoxelGrid], starts: Sequence, goals: Sequence, w: float = DEFAULT_ECBS_W,
              c_dw: float = DEFAULT_C_DW, timeout: float = DEFAULT_MAPF_TIMEOUT) -> List[DiscretePlan]:
    """
    Plans conflict-free lattice paths for all agents.

    Args:
        grids (Sequence[VoxelGrid]): One grid per agent.
        starts (Sequence): Start points in meters, snapped to the lattice.
        goals (Sequence): Goal points in meters, snapped to the lattice.
        w (float): ECBS suboptimality bound.
        c_dw (float): Downwash coefficient.
        timeout (float): Time budget in seconds.

    Returns:
        List[DiscretePlan]: Plans padded to a common makespan M >= 1.

    Raises:
        UnreachableError: If a start or goal cannot be snapped.
        MapfTimeoutError: If ECBS exceeds its time budget.
        MapfError: If no solution exists.
    """
    start_cells = [snap_to_grid(grid, p) for grid, p in zip(grids, starts)]
    goal_cells = [snap_to_grid(grid, p) for grid, p in zip(grids, goals)]
    planner = EcbsPlanner(grids, start_cells, goal_cells, w=w, c_dw=c_dw, timeout=timeout)
    paths = planner.solve()
    length = max(2, max(len(p) for p in paths))
    plans = []
    for agent, path in enumerate(paths):
        padded = list(path) + [path[-1]] * (length - len(path))
        waypoints = np.array([grids[agent].position(cell) for cell in padded])
        plans.append(DiscretePlan(agent, waypoints, tuple(padded), len(path) - 1))
    return plans


def flow_time(plans: Sequence[DiscretePlan]) -> int:
    return sum(plan.cost for plan in plans)


def attach_endpoints(plans: Sequence[DiscretePlan], starts: Sequence, goals: Sequence, world: OccupancyWorld,
                     radii: Sequence[float], c_dw: float = DEFAULT_C_DW) -> List[DiscretePlan]:
    """
    Connects off-lattice starts and goals to the snapped plans.

    When any agent's start (goal) is off its snapped lattice point, every plan
    gains one leading (trailing) step so the plans keep a common makespan;
    agents already on the lattice hold still during that step.

    Raises:
        UnreachableError: If a connector violates the obstacle clearance.
        MapfError: If a connector step makes two agents conflict.
    """
    waypoints = [np.array(plan.waypoints) for plan in plans]
    cells = [list(plan.cells) for plan in plans]
    costs = [plan.cost for plan in plans]
    starts = np.asarray(starts, dtype=float).reshape(-1, 3)
    goals = np.asarray(goals, dtype=float).reshape(-1, 3)

    def connect(points, at_start: bool):
        index = 0 if at_start else -1
        offset = [not np.allclose(w[index], p, atol=GEOMETRY_TOL) for w, p in zip(waypoints, points)]
        if not any(offset):
            return
        for agent, point in enumerate(points):
            anchor = waypoints[agent][index]
            if offset[agent] and not box_is_free(world, Box.from_points(point, anchor), radii[agent]):
                label = "start" if at_start else "goal"
                raise UnreachableError(
                    f"{label} of agent {agent} cannot be connected to the lattice point {anchor.tolist()}",
                    stage="mapf",
                )
            extra = point if offset[agent] else anchor
            if at_start:
                waypoints[agent] = np.vstack([extra, waypoints[agent]])
                cells[agent].insert(0, None if offset[agent] else cells[agent][0])
                costs[agent] += 1
            else:
                waypoints[agent] = np.vstack([waypoints[agent], extra])
                cells[agent].append(None if offset[agent] else cells[agent][-1])
                if offset[agent]:
                    costs[agent] = len(waypoints[agent]) - 1

    connect(starts, True)
    connect(goals, False)
    conflicts = find_conflicts(np.stack(waypoints), radii, c_dw)
    if conflicts:
        raise MapfError(f"start/goal connectors introduce conflicts: {conflicts[:3]}", stage="mapf")
    return [DiscretePlan(plan.agent_id, w, c, cost) for plan, w, c, cost in zip(plans, waypoints, cells, costs)]


def verify_plans(plans: Sequence[DiscretePlan], world: OccupancyWorld, radii: Sequence[float],
                 c_dw: float = DEFAULT_C_DW, starts: Optional[Sequence] = None,
                 goals: Optional[Sequence] = None) -> None:
    """
    Re-checks the discrete plan invariants independently of the search.

    Raises:
        MapfError: On the first violated invariant.
    """
    lengths = {plan.waypoints.shape[0] for plan in plans}
    if len(lengths) != 1:
        raise MapfError(f"plans are not padded to a common makespan: {sorted(lengths)}", stage="mapf")
    for plan in plans:
        agent = plan.agent_id
        r = radii[agent]
        if starts is not None and not np.allclose(plan.waypoints[0], starts[agent], atol=GEOMETRY_TOL):
            raise MapfError(f"plan of agent {agent} does not begin at its start", stage="mapf")
        if goals is not None and not np.allclose(plan.waypoints[-1], goals[agent], atol=GEOMETRY_TOL):
            raise MapfError(f"plan of agent {agent} does not end at its goal", stage="mapf")
        for m in range(1, plan.makespan + 1):
            a, b = plan.waypoints[m - 1], plan.waypoints[m]
            if plan.cells[m - 1] is not None and plan.cells[m] is not None:
                step = np.abs(np.subtract(plan.cells[m], plan.cells[m - 1]))
                if step.sum() > 1:
                    raise MapfError(f"agent {agent} makes a non-cardinal move at step {m}", stage="mapf")
            if not is_segment_free(world, a, b, r) or not box_is_free(world, Box.from_points(a, b), r):
                raise MapfError(f"step {m} of agent {agent} is not obstacle-free", stage="mapf")
    conflicts = find_conflicts(np.stack([plan.waypoints for plan in plans]), radii, c_dw)
    if conflicts:
        raise MapfError(f"plans conflict: {conflicts[:3]}", stage="mapf")
