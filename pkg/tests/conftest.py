from typing import Optional, Sequence

import numpy as np
import pytest

from swarm_planner.bernstein import PiecewiseBezier
from swarm_planner.mapf import DiscretePlan
from swarm_planner.occupancy_map import Box, OccupancyWorld, VoxelGrid


def make_plan(agent_id: int, waypoints: Sequence, cost: Optional[int] = None) -> DiscretePlan:
    waypoints = np.asarray(waypoints, dtype=float)
    return DiscretePlan(agent_id, waypoints, [None] * len(waypoints),
                        len(waypoints) - 1 if cost is None else cost)


def line_trajectory(agent_id: int, start, end, duration: float = 1.0, degree: int = 5) -> PiecewiseBezier:
    """Single constant-velocity segment from start to end."""
    fractions = np.linspace(0.0, 1.0, degree + 1)[:, None]
    points = np.asarray(start, dtype=float) + fractions * (np.asarray(end, dtype=float) - np.asarray(start))
    return PiecewiseBezier.from_control_points(agent_id, points[None], [0.0, duration])


def flat_grid(dims=(3, 3, 1), blocked=(), radius: float = 0.2, cell_size: float = 0.5) -> VoxelGrid:
    mask = np.zeros(dims, dtype=bool)
    for cell in blocked:
        mask[cell] = True
    return VoxelGrid(np.array([0.0, 0.0, 1.0]), cell_size, dims, mask, radius)


@pytest.fixture
def forest_bounds() -> Box:
    return Box((0.0, 0.0, 0.0), (10.0, 10.0, 2.5))


@pytest.fixture
def empty_world(forest_bounds) -> OccupancyWorld:
    return OccupancyWorld(forest_bounds)


@pytest.fixture
def small_world() -> OccupancyWorld:
    return OccupancyWorld(Box((0.0, 0.0, 0.0), (4.0, 4.0, 2.0)))


@pytest.fixture
def pillar_world() -> OccupancyWorld:
    """4 x 4 x 2 room with one full-height pillar in the middle."""
    return OccupancyWorld(
        Box((0.0, 0.0, 0.0), (4.0, 4.0, 2.0)),
        (Box((1.85, 1.85, 0.0), (2.15, 2.15, 2.0)),),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(7)
