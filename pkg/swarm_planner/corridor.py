"""Safe flight corridors (boxes) and relative safe flight corridors (half-spaces)."""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from swarm_planner.consts import DEFAULT_C_DW, DEFAULT_EXPAND_STEP, GEOMETRY_TOL
from swarm_planner.exceptions import CorridorError
from swarm_planner.mapf import DiscretePlan, closest_to_origin
from swarm_planner.occupancy_map import Box, OccupancyWorld, box_box_distance, box_is_free

# expansion order within one round: +x, -x, +y, -y, +z, -z
DIRECTIONS = ((0, True), (0, False), (1, True), (1, False), (2, True), (2, False))


@dataclass(frozen=True)
class SFC:
    agent_id: int
    segment: int
    box: Box


@dataclass(frozen=True, eq=False)
class RSFC:
    """Half-space {x : (E^{1/2} x) . normal > offset} for relative positions x = p^j - p^i.

    Attributes:
        pair (Tuple[int, int]): Agents (i, j), i < j.
        segment (int): Segment index m, 1-based.
        normal (np.ndarray): Unit normal in the transformed coordinates.
        offset (float): r^i + r^j in meters.
        c_dw (float): Downwash coefficient used for the transform.
    """
    pair: Tuple[int, int]
    segment: int
    normal: np.ndarray
    offset: float
    c_dw: float

    @property
    def coefficients(self) -> np.ndarray:
        """Normal of the same half-space in untransformed coordinates, E^{1/2} normal."""
        return self.normal * np.array([1.0, 1.0, 1.0 / self.c_dw])

    def value(self, relative) -> np.ndarray:
        """Signed slack a . x - offset; positive inside the half-space."""
        return np.asarray(relative, dtype=float) @ self.coefficients - self.offset

    def contains(self, relative, margin: float = 0.0) -> bool:
        return bool(np.all(self.value(relative) > margin))


@dataclass
class Corridors:
    """SFC boxes per agent and RSFC half-spaces per agent pair, both indexed by segment."""
    sfc: Dict[int, List[SFC]] = field(default_factory=dict)
    rsfc: Dict[Tuple[int, int], List[RSFC]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sfc": [
                {"agent": agent, "boxes": [c.box.to_dict() for c in corridors]}
                for agent, corridors in sorted(self.sfc.items())
            ],
            "rsfc": [
                {
                    "pair": list(pair),
                    "halfspaces": [
                        {"normal": c.normal.tolist(), "coefficients": c.coefficients.tolist(), "offset": c.offset}
                        for c in corridors
                    ],
                }
                for pair, corridors in sorted(self.rsfc.items())
            ],
        }


def _expand(box: Box, world: OccupancyWorld, r: float, expand_step: float) -> Box:
    lo, hi = box.lo, box.hi
    limit_lo = world.bounds.lo + r
    limit_hi = world.bounds.hi - r
    obstacle_lo, obstacle_hi = world.obstacle_lo, world.obstacle_hi
    active = [True] * len(DIRECTIONS)
    while any(active):
        for index, (axis, upper) in enumerate(DIRECTIONS):
            if not active[index]:
                continue
            slab_lo, slab_hi = lo.copy(), hi.copy()
            if upper:
                new = min(hi[axis] + expand_step, limit_hi[axis])
                if new <= hi[axis]:
                    active[index] = False
                    continue
                slab_lo[axis], slab_hi[axis] = hi[axis], new
            else:
                new = max(lo[axis] - expand_step, limit_lo[axis])
                if new >= lo[axis]:
                    active[index] = False
                    continue
                slab_lo[axis], slab_hi[axis] = new, lo[axis]
            if len(obstacle_lo) and np.any(box_box_distance(slab_lo, slab_hi, obstacle_lo, obstacle_hi) < r):
                active[index] = False
                continue
            if upper:
                hi[axis] = new
            else:
                lo[axis] = new
    return Box(tuple(lo), tuple(hi))


def build_sfc(plan: DiscretePlan, world: OccupancyWorld, r: float,
              expand_step: float = DEFAULT_EXPAND_STEP) -> List[SFC]:
    """
    Builds one box per plan segment by greedy face-by-face expansion.

    Each box starts as the bounding box of its segment and grows by
    `expand_step` in the fixed direction order until its radius-r inflation
    would touch an obstacle or leave the bounds (the last step may be partial
    to reach the bounds exactly).

    Args:
        plan (DiscretePlan): Obstacle-free discrete plan.
        world (OccupancyWorld): The workspace.
        r (float): Agent radius in meters.
        expand_step (float): Expansion length per step in meters.

    Returns:
        List[SFC]: Corridors for segments 1..M.

    Raises:
        CorridorError: If a segment's own bounding box is not free.
    """
    if expand_step <= 0:
        raise CorridorError(f"expand step must be positive, got {expand_step}", stage="corridor")
    corridors = []
    cache: Dict[Tuple[Tuple[float, ...], Tuple[float, ...]], Box] = {}
    for m in range(1, plan.makespan + 1):
        initial = Box.from_points(plan.waypoints[m - 1], plan.waypoints[m])
        key = (initial.lower, initial.upper)
        if key not in cache:
            if not box_is_free(world, initial, r, tol=GEOMETRY_TOL):
                raise CorridorError(
                    f"segment {m} of agent {plan.agent_id} violates obstacle clearance; plan is corrupt",
                    stage="corridor",
                )
            cache[key] = _expand(initial, world, r, expand_step)
        corridors.append(SFC(plan.agent_id, m, cache[key]))
    return corridors


def build_rsfc(plan_i: DiscretePlan, plan_j: DiscretePlan, r_i: float, r_j: float,
               c_dw: float = DEFAULT_C_DW) -> List[RSFC]:
    """
    Builds the tangent half-space of every segment for the pair (i, j).

    The relative waypoints p^j - p^i are mapped by E^{1/2} = diag(1, 1, 1/c_dw),
    the closest point of each transformed relative segment to the origin gives
    the unit normal, and the half-space is tangent to the inter-collision
    ellipsoid.

    Raises:
        CorridorError: If a relative segment enters the inter-collision ellipsoid.
    """
    if plan_i.makespan != plan_j.makespan:
        raise CorridorError("plans of a pair must share one makespan", stage="corridor")
    r_sum = r_i + r_j
    scale = np.array([1.0, 1.0, 1.0 / c_dw])
    relative = (plan_j.waypoints - plan_i.waypoints) * scale
    pair = (plan_i.agent_id, plan_j.agent_id)
    corridors = []
    for m in range(1, plan_i.makespan + 1):
        closest = closest_to_origin(relative[m - 1], relative[m])
        distance = float(np.linalg.norm(closest))
        if distance <= r_sum:
            raise CorridorError(
                f"agents {pair} conflict on segment {m} ({distance:.6f} <= {r_sum}); plans are corrupt",
                stage="corridor",
            )
        corridors.append(RSFC(pair, m, closest / distance, r_sum, c_dw))
    return corridors


def build_corridors(plans: Sequence[DiscretePlan], world: OccupancyWorld, radii: Sequence[float],
                    c_dw: float = DEFAULT_C_DW, expand_step: float = DEFAULT_EXPAND_STEP) -> Corridors:
    """Builds SFCs for every agent and RSFCs for every agent pair."""
    corridors = Corridors()
    for plan in plans:
        corridors.sfc[plan.agent_id] = build_sfc(plan, world, radii[plan.agent_id], expand_step)
    for index, plan_i in enumerate(plans):
        for plan_j in plans[index + 1:]:
            corridors.rsfc[(plan_i.agent_id, plan_j.agent_id)] = build_rsfc(
                plan_i, plan_j, radii[plan_i.agent_id], radii[plan_j.agent_id], c_dw
            )
    logging.info(f"Built {len(corridors.sfc)} SFC sets and {len(corridors.rsfc)} RSFC sets.")
    return corridors


def verify_corridors(corridors: Corridors, plans: Sequence[DiscretePlan], world: OccupancyWorld,
                     radii: Sequence[float]) -> None:
    """
    Re-checks corridor containment and safety against the plans.

    Raises:
        CorridorError: On the first violation.
    """
    by_id = {plan.agent_id: plan for plan in plans}
    for agent, boxes in corridors.sfc.items():
        plan = by_id[agent]
        for sfc in boxes:
            m = sfc.segment
            for point in (plan.waypoints[m - 1], plan.waypoints[m]):
                if not sfc.box.contains(point, GEOMETRY_TOL):
                    raise CorridorError(f"SFC {m} of agent {agent} does not contain its segment", stage="corridor")
            if not box_is_free(world, sfc.box, radii[agent], tol=GEOMETRY_TOL):
                raise CorridorError(f"SFC {m} of agent {agent} is not obstacle-free", stage="corridor")
    for (i, j), halfspaces in corridors.rsfc.items():
        relative = by_id[j].waypoints - by_id[i].waypoints
        for rsfc in halfspaces:
            m = rsfc.segment
            if not rsfc.contains(relative[m - 1:m + 1]):
                raise CorridorError(f"RSFC {m} of pair {(i, j)} does not contain its relative segment",
                                    stage="corridor")
