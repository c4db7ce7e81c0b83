"""Missions, random forests and antipodal start/goal assignment.

Random draws use numpy's PCG64 bit generator (`np.random.default_rng(seed)`),
whose stream is fixed across platforms, so a seed names one world.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from swarm_planner.consts import (
    DEFAULT_A_MAX,
    DEFAULT_C_DW,
    DEFAULT_GRID_SIZE,
    DEFAULT_RADIUS,
    DEFAULT_V_MAX,
    FOREST_BOUNDS,
    FOREST_N_TREES,
    FOREST_PLACEMENT_ATTEMPTS,
    FOREST_START_HEIGHT,
    FOREST_TREE_H_RANGE,
    FOREST_TREE_XY,
)
from swarm_planner.exceptions import MapFormatError, MissionError, ScenarioError
from swarm_planner.json_utils import read_json_file, write_json_file
from swarm_planner.occupancy_map import (
    Box,
    OccupancyWorld,
    load_world,
    point_box_distance,
    points_free,
    world_from_dict,
    world_to_dict,
)

ANTIPODAL_MARGIN = 0.5


@dataclass(frozen=True)
class AgentSpec:
    id: int
    start: Tuple[float, float, float]
    goal: Tuple[float, float, float]
    radius: float = DEFAULT_RADIUS
    v_max: float = DEFAULT_V_MAX
    a_max: float = DEFAULT_A_MAX

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "start": list(self.start),
            "goal": list(self.goal),
            "radius": self.radius,
            "v_max": self.v_max,
            "a_max": self.a_max,
        }


@dataclass(frozen=True, eq=False)
class Mission:
    """Agents with their start/goal points and limits, flying in one world.

    Attributes:
        agents (Tuple[AgentSpec, ...]): Agents ordered by id 0..N-1.
        world (OccupancyWorld): The workspace.
        c_dw (float): Downwash coefficient.
        world_path (Optional[str]): File the world was loaded from, if any.
    """
    agents: Tuple[AgentSpec, ...]
    world: OccupancyWorld
    c_dw: float = DEFAULT_C_DW
    world_path: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))

    @property
    def starts(self) -> np.ndarray:
        return np.array([agent.start for agent in self.agents], dtype=float).reshape(-1, 3)

    @property
    def goals(self) -> np.ndarray:
        return np.array([agent.goal for agent in self.agents], dtype=float).reshape(-1, 3)

    @property
    def radii(self) -> List[float]:
        return [agent.radius for agent in self.agents]

    @property
    def v_max(self) -> List[float]:
        return [agent.v_max for agent in self.agents]

    @property
    def a_max(self) -> List[float]:
        return [agent.a_max for agent in self.agents]


def _ellipsoid_overlap(points: np.ndarray, radii: Sequence[float], c_dw: float) -> Optional[Tuple[int, int]]:
    scale = np.array([1.0, 1.0, 1.0 / c_dw])
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            if np.linalg.norm((points[j] - points[i]) * scale) <= radii[i] + radii[j]:
                return i, j
    return None


def validate_mission(mission: Mission) -> None:
    """
    Checks ids, obstacle clearance of every start/goal and pairwise
    separation at the start and at the goal.

    Raises:
        MissionError: On the first violation.
    """
    if not mission.agents:
        raise MissionError("mission has no agents")
    ids = [agent.id for agent in mission.agents]
    if ids != list(range(len(ids))):
        raise MissionError(f"agent ids must be 0..{len(ids) - 1} in order, got {ids}")
    if mission.c_dw <= 0:
        raise MissionError(f"c_dw must be positive, got {mission.c_dw}")
    for agent in mission.agents:
        if agent.radius <= 0 or agent.v_max <= 0 or agent.a_max <= 0:
            raise MissionError(f"agent {agent.id} needs positive radius, v_max and a_max")
        for label, point in (("start", agent.start), ("goal", agent.goal)):
            if not points_free(mission.world, [point], agent.radius)[0]:
                raise MissionError(f"{label} {list(point)} of agent {agent.id} is not obstacle-free")
    for label, points in (("starts", mission.starts), ("goals", mission.goals)):
        pair = _ellipsoid_overlap(points, mission.radii, mission.c_dw)
        if pair:
            raise MissionError(f"{label} of agents {pair} collide")


def mission_to_dict(mission: Mission, world_ref: Optional[str] = None) -> Dict[str, Any]:
    return {
        "world": world_ref if world_ref is not None else world_to_dict(mission.world),
        "c_dw": mission.c_dw,
        "agents": [agent.to_dict() for agent in mission.agents],
    }


def _point(value: Any, where: str) -> Tuple[float, float, float]:
    if not isinstance(value, list) or len(value) != 3 or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise MissionError(f"{where}: expected a list of 3 numbers, got {value!r}")
    return tuple(float(v) for v in value)


def mission_from_dict(data: Any, base_dir: str = "", source: str = "<mission>") -> Mission:
    """
    Builds a mission from its JSON representation.

    Args:
        data (Any): {"world": path or inline world, "c_dw", "agents": [...]}.
        base_dir (str): Directory relative world paths are resolved against.
        source (str): Label used in error messages.

    Returns:
        Mission: The validated mission.
    """
    if not isinstance(data, dict):
        raise MissionError(f"{source}: top level must be an object")
    world_ref = data.get("world")
    world_path = None
    try:
        if isinstance(world_ref, str):
            world_path = world_ref if os.path.isabs(world_ref) else os.path.join(base_dir, world_ref)
            world = load_world(world_path)
        else:
            world = world_from_dict(world_ref, f"{source}: world")
    except MapFormatError as e:
        raise MissionError(str(e)) from e
    raw_agents = data.get("agents")
    if not isinstance(raw_agents, list):
        raise MissionError(f"{source}: agents must be a list")
    agents = []
    for index, raw in enumerate(raw_agents):
        where = f"{source}: agents[{index}]"
        if not isinstance(raw, dict):
            raise MissionError(f"{where}: expected an object")
        agents.append(AgentSpec(
            id=int(raw.get("id", index)),
            start=_point(raw.get("start"), f"{where}.start"),
            goal=_point(raw.get("goal"), f"{where}.goal"),
            radius=float(raw.get("radius", DEFAULT_RADIUS)),
            v_max=float(raw.get("v_max", DEFAULT_V_MAX)),
            a_max=float(raw.get("a_max", DEFAULT_A_MAX)),
        ))
    mission = Mission(tuple(agents), world, float(data.get("c_dw", DEFAULT_C_DW)), world_path)
    validate_mission(mission)
    return mission


def load_mission(path: str) -> Mission:
    try:
        data = read_json_file(path)
    except (OSError, ValueError) as e:
        raise MissionError(str(e)) from e
    mission = mission_from_dict(data, os.path.dirname(path), path)
    logging.info(f"Loaded mission {path} with {len(mission.agents)} agents.")
    return mission


def save_mission(mission: Mission, path: str, world_ref: Optional[str] = None) -> None:
    """Writes a mission; the world is inlined unless `world_ref` names a world file."""
    write_json_file(mission_to_dict(mission, world_ref), path)


def gen_forest(seed: int, n_trees: int = FOREST_N_TREES, bounds=FOREST_BOUNDS, tree_xy: float = FOREST_TREE_XY,
               tree_h_range: Tuple[float, float] = FOREST_TREE_H_RANGE, keep_clear: Sequence = (),
               keep_clear_radius: float = 0.0) -> OccupancyWorld:
    """
    Generates a random forest of ground-mounted box trees.

    Args:
        seed (int): Seed of the PCG64 generator.
        n_trees (int): Number of trees.
        bounds: Workspace corners ((x, y, z) min, (x, y, z) max).
        tree_xy (float): Footprint side length in meters.
        tree_h_range (Tuple[float, float]): Uniform height range in meters.
        keep_clear (Sequence): Points no tree may come within `keep_clear_radius` of.
        keep_clear_radius (float): Keep-clear distance in meters.

    Returns:
        OccupancyWorld: The forest, identical for identical arguments.

    Raises:
        ScenarioError: On invalid parameters or when a tree cannot be placed
            after the maximum number of attempts.
    """
    bounds = bounds if isinstance(bounds, Box) else Box(tuple(bounds[0]), tuple(bounds[1]))
    if n_trees < 0:
        raise ScenarioError(f"number of trees must be non-negative, got {n_trees}")
    low_h, high_h = tree_h_range
    if not 0 < low_h <= high_h <= bounds.extent[2]:
        raise ScenarioError(f"tree heights {tree_h_range} must lie within (0, {bounds.extent[2]}]")
    if not 0 < tree_xy < min(bounds.extent[:2]):
        raise ScenarioError(f"tree footprint {tree_xy} does not fit the bounds")

    rng = np.random.default_rng(seed)
    keep_clear = np.asarray(keep_clear, dtype=float).reshape(-1, 3)
    trees = []
    for index in range(n_trees):
        for _ in range(FOREST_PLACEMENT_ATTEMPTS):
            x = rng.uniform(bounds.lower[0], bounds.upper[0] - tree_xy)
            y = rng.uniform(bounds.lower[1], bounds.upper[1] - tree_xy)
            height = rng.uniform(low_h, high_h)
            tree = Box((x, y, bounds.lower[2]), (x + tree_xy, y + tree_xy, bounds.lower[2] + height))
            if not len(keep_clear) or np.all(point_box_distance(keep_clear, tree.lo, tree.hi) >= keep_clear_radius):
                trees.append(tree)
                break
        else:
            raise ScenarioError(
                f"could not place tree {index} clear of start/goal zones after {FOREST_PLACEMENT_ATTEMPTS} attempts"
            )
    logging.info(f"Generated forest with {len(trees)} trees from seed {seed}.")
    return OccupancyWorld(bounds, tuple(trees))


def _perimeter_point(s: float, lo: np.ndarray, hi: np.ndarray) -> Tuple[float, float]:
    # walk counter-clockwise from the midpoint of the bottom edge
    width, depth = hi - lo
    x, y = lo[0] + width / 2, lo[1]
    for length, dx, dy in ((width / 2, 1, 0), (depth, 0, 1), (width, -1, 0), (depth, 0, -1), (width / 2, 1, 0)):
        step = min(s, length)
        x, y = x + dx * step, y + dy * step
        s -= step
        if s <= 0:
            break
    return x, y


def assign_antipodal(n_agents: int, bounds=FOREST_BOUNDS, height: float = FOREST_START_HEIGHT,
                     radius: float = DEFAULT_RADIUS, margin: float = ANTIPODAL_MARGIN
                     ) -> List[Tuple[Tuple[float, float, float], Tuple[float, float, float]]]:
    """
    Spaces starts evenly along the xy boundary and sends every agent to the
    point reflection of its start through the xy center.

    Args:
        n_agents (int): Number of agents.
        bounds: Workspace corners.
        height (float): Flight height of starts and goals.
        radius (float): Largest agent radius.
        margin (float): Inset of the start loop from the bounds in meters.

    Returns:
        List of (start, goal) pairs.

    Raises:
        ScenarioError: If n_agents < 1 or starts end up closer than 2 * radius.
    """
    bounds = bounds if isinstance(bounds, Box) else Box(tuple(bounds[0]), tuple(bounds[1]))
    if n_agents < 1:
        raise ScenarioError(f"need at least one agent, got {n_agents}")
    lo = bounds.lo[:2] + margin
    hi = bounds.hi[:2] - margin
    if np.any(hi <= lo):
        raise ScenarioError(f"margin {margin} leaves no room inside {bounds.to_dict()}")
    perimeter = 2 * float(np.sum(hi - lo))
    center = (bounds.lo[:2] + bounds.hi[:2]) / 2
    starts = np.array([_perimeter_point(k * perimeter / n_agents, lo, hi) for k in range(n_agents)])
    if n_agents > 1:
        gaps = np.linalg.norm(starts[:, None] - starts[None], axis=-1)
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() < 2 * radius:
            raise ScenarioError(f"{n_agents} starts are {gaps.min():.3f} m apart, below 2 * radius = {2 * radius}")
    goals = 2 * center - starts
    return [
        ((float(s[0]), float(s[1]), float(height)), (float(g[0]), float(g[1]), float(height)))
        for s, g in zip(starts, goals)
    ]


def gen_mission(n_agents: int, seed: int = 0, n_trees: int = FOREST_N_TREES, world: Optional[OccupancyWorld] = None,
                radius: float = DEFAULT_RADIUS, v_max: float = DEFAULT_V_MAX, a_max: float = DEFAULT_A_MAX,
                c_dw: float = DEFAULT_C_DW, height: float = FOREST_START_HEIGHT,
                grid_size: float = DEFAULT_GRID_SIZE, bounds=FOREST_BOUNDS) -> Mission:
    """
    Builds an antipodal mission, generating a forest around it unless a world
    is given. Trees keep `radius + grid_size` away from every start and goal.
    """
    pairs = assign_antipodal(n_agents, world.bounds if world is not None else bounds, height, radius)
    if world is None:
        keep_clear = [p for pair in pairs for p in pair]
        world = gen_forest(seed, n_trees, bounds, keep_clear=keep_clear, keep_clear_radius=radius + grid_size)
    agents = tuple(
        AgentSpec(index, start, goal, radius, v_max, a_max) for index, (start, goal) in enumerate(pairs)
    )
    mission = Mission(agents, world, c_dw)
    validate_mission(mission)
    return mission
