"""End-to-end planning: grid, ECBS, corridors, batched QP, time scaling, validation."""
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from swarm_planner.bernstein import PiecewiseBezier
from swarm_planner.consts import (
    DEFAULT_DEGREE,
    DEFAULT_ECBS_W,
    DEFAULT_EXPAND_STEP,
    DEFAULT_GRID_SIZE,
    DEFAULT_MAPF_TIMEOUT,
    DEFAULT_NUM_BATCHES,
    DEFAULT_PHI,
    DEFAULT_RADIUS,
    DEFAULT_RSFC_MARGIN,
    FOREST_N_TREES,
)
from swarm_planner.corridor import Corridors, build_corridors, verify_corridors
from swarm_planner.exceptions import ConfigurationError, PlannerError, PlanningFailed
from swarm_planner.json_utils import read_json_file, write_json_file
from swarm_planner.mapf import DiscretePlan, attach_endpoints, plan_ecbs, verify_plans
from swarm_planner.occupancy_map import build_grid
from swarm_planner.optimizer import BatchStats, initial_knots, traj_opt, time_scale
from swarm_planner.scenario import Mission, gen_mission
from swarm_planner.validate import ValidationReport, validate
from swarm_planner.yaml_utils import read_config


@dataclass
class PlannerConfig:
    grid_size: float = DEFAULT_GRID_SIZE
    ecbs_w: float = DEFAULT_ECBS_W
    degree: int = DEFAULT_DEGREE
    phi: int = DEFAULT_PHI
    num_batches: int = DEFAULT_NUM_BATCHES
    batch_size: Optional[int] = None
    expand_step: float = DEFAULT_EXPAND_STEP
    mapf_timeout: float = DEFAULT_MAPF_TIMEOUT
    seed: int = 0
    rsfc_margin: float = DEFAULT_RSFC_MARGIN
    strict_rsfc: bool = False
    sample_dt: Optional[float] = None

    def __post_init__(self):
        if self.grid_size <= 0:
            raise ConfigurationError(f"grid_size must be positive, got {self.grid_size}")
        if self.ecbs_w < 1:
            raise ConfigurationError(f"ecbs_w must be at least 1, got {self.ecbs_w}")
        if self.phi < 1:
            raise ConfigurationError(f"phi must be at least 1, got {self.phi}")
        if self.degree < 2 * self.phi - 1:
            raise ConfigurationError(f"degree {self.degree} is below 2 * phi - 1 = {2 * self.phi - 1}")
        if self.num_batches < 1:
            raise ConfigurationError(f"num_batches must be at least 1, got {self.num_batches}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.expand_step <= 0 or self.mapf_timeout <= 0:
            raise ConfigurationError("expand_step and mapf_timeout must be positive")
        if self.rsfc_margin < 0:
            raise ConfigurationError(f"rsfc_margin must be non-negative, got {self.rsfc_margin}")
        if self.sample_dt is not None and self.sample_dt <= 0:
            raise ConfigurationError(f"sample_dt must be positive, got {self.sample_dt}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PlannerConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {unknown}")
        return cls(**data)

    def batches_for(self, n_agents: int) -> int:
        """Number of batches N_b for n_agents agents."""
        if self.batch_size is not None:
            return math.ceil(n_agents / self.batch_size)
        if self.num_batches > n_agents:
            logging.warning(f"num_batches {self.num_batches} exceeds {n_agents} agents; using {n_agents}.")
            return n_agents
        return self.num_batches


def load_config(path: Optional[str] = None, profile: Optional[str] = None) -> PlannerConfig:
    """Reads a PlannerConfig from a YAML or JSON file; defaults without a path."""
    if path is None:
        return PlannerConfig()
    return PlannerConfig.from_dict(read_config(path, profile))


@dataclass
class PlanResult:
    """Everything a planning run produced.

    Attributes:
        total_time (float): Flight time of the scaled trajectories.
        trajectories (List[PiecewiseBezier]): One per agent.
        report (ValidationReport): Independent validation of the trajectories.
        plans (List[DiscretePlan]): Initial discrete plans.
        corridors (Corridors): SFCs and RSFCs.
        scale (float): Time scale k applied after optimisation.
        stage_times (Dict[str, float]): Wall time per stage in seconds.
        batch_stats (List[BatchStats]): Per-batch QP statistics.
    """
    total_time: float
    trajectories: List[PiecewiseBezier]
    report: ValidationReport
    plans: List[DiscretePlan] = field(default_factory=list)
    corridors: Optional[Corridors] = None
    scale: float = 1.0
    stage_times: Dict[str, float] = field(default_factory=dict)
    batch_stats: List[BatchStats] = field(default_factory=list)

    def summary(self) -> Dict[str, Any]:
        return {
            "total_time": self.total_time,
            "scale": self.scale,
            "makespan": self.plans[0].makespan if self.plans else None,
            "stage_times": self.stage_times,
            "batches": [asdict(stats) for stats in self.batch_stats],
            "report": self.report.to_dict(),
        }


@contextmanager
def _stage(name: str, timings: Dict[str, float]) -> Iterator[None]:
    logging.info(f"Stage '{name}' started.")
    started = time.perf_counter()
    try:
        yield
    except PlanningFailed:
        raise
    except PlannerError as e:
        logging.error(f"Stage '{name}' failed: {e}")
        raise PlanningFailed(str(e), stage=name) from e
    finally:
        timings[name] = time.perf_counter() - started
    logging.info(f"Stage '{name}' finished in {timings[name]:.3f} s.")


def plan(mission: Mission, config: Optional[PlannerConfig] = None, dump_dir: Optional[str] = None,
         dump_corridors: Optional[str] = None) -> PlanResult:
    """
    Plans safe trajectories for every agent of a mission.

    Args:
        mission (Mission): Validated mission.
        config (Optional[PlannerConfig]): Planner settings; defaults if None.
        dump_dir (Optional[str]): Directory receiving a dump of every batch QP.
        dump_corridors (Optional[str]): File receiving the corridors as JSON.

    Returns:
        PlanResult: Scaled trajectories with their validation report.

    Raises:
        PlanningFailed: Labelled with the stage that failed.
    """
    config = config or PlannerConfig()
    world = mission.world
    radii = mission.radii
    timings: Dict[str, float] = {}
    batch_stats: List[BatchStats] = []

    with _stage("grid", timings):
        grids_by_radius = {r: build_grid(world, config.grid_size, r) for r in sorted(set(radii))}
        grids = [grids_by_radius[r] for r in radii]

    with _stage("mapf", timings):
        plans = plan_ecbs(grids, mission.starts, mission.goals, config.ecbs_w, mission.c_dw, config.mapf_timeout)
        plans = attach_endpoints(plans, mission.starts, mission.goals, world, radii, mission.c_dw)
        verify_plans(plans, world, radii, mission.c_dw, mission.starts, mission.goals)
        logging.info(f"Initial plans ready: makespan {plans[0].makespan}.")

    with _stage("corridor", timings):
        corridors = build_corridors(plans, world, radii, mission.c_dw, config.expand_step)
        verify_corridors(corridors, plans, world, radii)
        if dump_corridors:
            write_json_file(corridors.to_dict(), dump_corridors)

    with _stage("optimizer", timings):
        knots = initial_knots(plans[0].makespan, config.grid_size, mission.v_max)
        trajectories = traj_opt(plans, corridors, config.batches_for(len(plans)), knots, config.degree, config.phi,
                                config.rsfc_margin, config.strict_rsfc, dump_dir, batch_stats)

    with _stage("scaling", timings):
        scale, trajectories = time_scale(trajectories, mission.v_max, mission.a_max)

    with _stage("validate", timings):
        report = validate(trajectories, world, radii, mission.v_max, mission.a_max, mission.c_dw, config.phi,
                          config.sample_dt, mission.starts, mission.goals)
        report.raise_for_failure()

    return PlanResult(report.total_time, trajectories, report, plans, corridors, scale, timings, batch_stats)


def trajectories_to_dict(trajectories: Sequence[PiecewiseBezier], radii: Sequence[float]) -> Dict[str, Any]:
    return {
        "total_time": float(trajectories[0].knots[-1]),
        "knots": trajectories[0].knots,
        "degree": trajectories[0].degree,
        "agents": [
            {"id": traj.agent_id, "radius": float(radii[traj.agent_id]), "segments": traj.control_points}
            for traj in trajectories
        ],
    }


def save_trajectories(trajectories: Sequence[PiecewiseBezier], radii: Sequence[float], path: str) -> None:
    """Writes trajectories as JSON; floats keep their shortest round-trip form."""
    write_json_file(trajectories_to_dict(trajectories, radii), path)
    logging.info(f"Trajectories written to {path}.")


def load_trajectories(path: str) -> Tuple[List[PiecewiseBezier], List[float]]:
    """
    Reads trajectories written by save_trajectories.

    Returns:
        Tuple[List[PiecewiseBezier], List[float]]: Trajectories and radii, by agent id.

    Raises:
        ValueError: If the file does not follow the trajectory schema.
    """
    data = read_json_file(path)
    try:
        knots = data["knots"]
        degree = int(data["degree"])
        agents = sorted(data["agents"], key=lambda agent: agent["id"])
        trajectories = [PiecewiseBezier.from_control_points(int(a["id"]), a["segments"], knots) for a in agents]
        radii = [float(a.get("radius", DEFAULT_RADIUS)) for a in agents]
    except (KeyError, TypeError) as e:
        raise ValueError(f"{path}: malformed trajectory file ({e})") from e
    for traj in trajectories:
        if traj.degree != degree:
            raise ValueError(f"{path}: agent {traj.agent_id} has degree {traj.degree}, expected {degree}")
    return trajectories, radii


def run_benchmark(agent_counts: Sequence[int], seeds: Sequence[int], config: Optional[PlannerConfig] = None,
                  radius: float = DEFAULT_RADIUS, n_trees: int = FOREST_N_TREES) -> pd.DataFrame:
    """
    Plans antipodal missions in seeded random forests.

    Returns:
        pd.DataFrame: One row per (agents, seed) with success, failing stage,
            cost, flight time, margin ratio and stage timings.
    """
    config = config or PlannerConfig()
    rows = []
    for n_agents in agent_counts:
        for seed in seeds:
            row: Dict[str, Any] = {"agents": n_agents, "seed": seed, "radius": radius}
            try:
                mission = gen_mission(n_agents, seed=seed, n_trees=n_trees, radius=radius, grid_size=config.grid_size)
                result = plan(mission, config)
            except PlanningFailed as e:
                logging.warning(f"Benchmark run agents={n_agents} seed={seed} failed: {e}")
                row.update({"success": False, "failed_stage": e.stage})
            except PlannerError as e:
                logging.warning(f"Benchmark scenario agents={n_agents} seed={seed} is invalid: {e}")
                row.update({"success": False, "failed_stage": "scenario"})
            else:
                row.update({
                    "success": True,
                    "failed_stage": None,
                    "cost": result.report.objective_cost,
                    "total_time": result.total_time,
                    "margin_ratio": result.report.min_inter_margin_ratio,
                    "distance": result.report.total_flight_distance,
                    "scale": result.scale,
                    "qp_batch_time": float(np.mean([s.solve_time for s in result.batch_stats])),
                })
                row.update({f"time_{stage}": seconds for stage, seconds in result.stage_times.items()})
            rows.append(row)
    return pd.DataFrame(rows)


def summarize_benchmark(results: pd.DataFrame) -> pd.DataFrame:
    """Success rate and mean metrics per agent count."""
    summary = results.groupby("agents").agg(success_rate=("success", "mean"), runs=("success", "size"))
    for column in ("cost", "total_time", "margin_ratio", "qp_batch_time"):
        if column in results:
            summary[column] = results.groupby("agents")[column].mean()
    return summary.reset_index()
