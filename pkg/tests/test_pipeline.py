import json
from pathlib import Path

import numpy as np
import pytest

from swarm_planner.consts import DEFAULT_GRID_SIZE, DEFAULT_V_MAX
from swarm_planner.exceptions import ConfigurationError, PlanningFailed
from swarm_planner.main import EXIT_FAILED, EXIT_INPUT, EXIT_OK, main
from swarm_planner.mapf import attach_endpoints, plan_ecbs
from swarm_planner.occupancy_map import Box, OccupancyWorld, build_grid
from swarm_planner.corridor import build_corridors
from swarm_planner.optimizer import (
    assemble_batch_qp,
    constraint_violation,
    initial_knots,
    partition_batches,
    plan_dummy,
    traj_opt,
    witness_vector,
)
from swarm_planner.pipeline import (
    PlannerConfig,
    load_config,
    load_trajectories,
    plan,
    run_benchmark,
    save_trajectories,
    summarize_benchmark,
)
from swarm_planner.scenario import AgentSpec, Mission, gen_mission, save_mission
from swarm_planner.yaml_utils import read_config

CONFIG_PATH = Path(__file__).resolve().parents[1] / "config" / "planner_config.yaml"


def mission_in(world, *pairs, radius=0.15):
    return Mission(tuple(AgentSpec(i, s, g, radius) for i, (s, g) in enumerate(pairs)), world)


def test_default_config_matches_the_shipped_defaults():
    assert load_config(str(CONFIG_PATH)) == PlannerConfig()


def test_profiles_override_the_defaults():
    config = load_config(str(CONFIG_PATH), "fine-grid")
    assert config.grid_size == 0.25 and config.mapf_timeout == 300.0
    assert load_config(str(CONFIG_PATH), "strict").strict_rsfc


def test_unknown_profile_is_rejected():
    with pytest.raises(ConfigurationError, match="unknown profile"):
        read_config(str(CONFIG_PATH), "turbo")


def test_profiles_without_defaults_need_a_choice(tmp_path):
    path = tmp_path / "profiles.yaml"
    path.write_text("profile-a:\n  grid_size: 0.5\nprofile-b:\n  grid_size: 0.25\n")
    with pytest.raises(ConfigurationError, match="choose a profile"):
        read_config(str(path))
    assert read_config(str(path), "b") == {"grid_size": 0.25}


def test_flat_json_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"grid_size": 0.25, "batch_size": 2}))
    config = load_config(str(path))
    assert config.grid_size == 0.25 and config.batch_size == 2


def test_broken_yaml_is_a_configuration_error(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("grid_size: [0.5\n")
    with pytest.raises(ConfigurationError):
        read_config(str(path))


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigurationError, match="unknown configuration keys"):
        PlannerConfig.from_dict({"grid": 0.5})


@pytest.mark.parametrize("kwargs", [
    {"grid_size": 0.0},
    {"ecbs_w": 0.9},
    {"degree": 4},
    {"num_batches": 0},
    {"batch_size": 0},
    {"rsfc_margin": -1.0},
    {"sample_dt": 0.0},
])
def test_invalid_config_values(kwargs):
    with pytest.raises(ConfigurationError):
        PlannerConfig(**kwargs)


def test_batches_for():
    assert PlannerConfig(batch_size=4).batches_for(10) == 3
    assert PlannerConfig(num_batches=2).batches_for(10) == 2
    assert PlannerConfig(num_batches=5).batches_for(3) == 3


def test_single_agent_plan(small_world):
    result = plan(mission_in(small_world, ((0.5, 0.5, 1.0), (3.5, 3.5, 1.0))))
    assert result.report.passed
    assert result.report.boundary_error < 1e-5
    assert np.allclose(result.trajectories[0].evaluate(result.total_time), [3.5, 3.5, 1.0], atol=1e-5)
    assert set(result.stage_times) == {"grid", "mapf", "corridor", "optimizer", "scaling", "validate"}


def test_off_lattice_endpoints_are_connected(small_world):
    result = plan(mission_in(small_world, ((0.6, 0.7, 1.1), (3.3, 3.4, 0.9))))
    assert np.allclose(result.trajectories[0].evaluate(0.0), [0.6, 0.7, 1.1], atol=1e-5)
    assert result.plans[0].cells[0] is None


def test_two_agent_swap_plan(small_world, tmp_path):
    mission = mission_in(small_world, ((0.5, 2.0, 1.0), (3.5, 2.0, 1.0)), ((3.5, 2.0, 1.0), (0.5, 2.0, 1.0)))
    dump = tmp_path / "corridors.json"
    result = plan(mission, dump_corridors=str(dump))
    assert result.report.passed
    assert result.report.min_inter_margin_ratio > 100.0
    assert json.loads(dump.read_text())["rsfc"][0]["pair"] == [0, 1]
    summary = result.summary()
    assert summary["report"]["passed"] is True
    assert summary["makespan"] == result.plans[0].makespan


def test_unreachable_goal_names_the_stage():
    world = OccupancyWorld(Box((0, 0, 0), (4, 4, 2)), (Box((1.9, 0.0, 0.0), (2.1, 4.0, 2.0)),))
    with pytest.raises(PlanningFailed) as info:
        plan(mission_in(world, ((1.0, 1.0, 1.0), (3.0, 1.0, 1.0))))
    assert info.value.stage == "mapf"


def test_saved_trajectories_are_byte_identical(small_world, tmp_path):
    mission = mission_in(small_world, ((0.5, 0.5, 1.0), (3.5, 3.5, 1.0)), ((3.5, 0.5, 1.0), (0.5, 3.5, 1.0)))
    paths = []
    for name in ("first.json", "second.json"):
        result = plan(mission, PlannerConfig(num_batches=2))
        paths.append(tmp_path / name)
        save_trajectories(result.trajectories, mission.radii, str(paths[-1]))
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_load_trajectories_restores_what_was_saved(small_world, tmp_path):
    mission = mission_in(small_world, ((0.5, 0.5, 1.0), (2.5, 1.5, 1.0)))
    result = plan(mission)
    path = str(tmp_path / "traj.json")
    save_trajectories(result.trajectories, mission.radii, path)
    trajectories, radii = load_trajectories(path)
    assert radii == [0.15]
    assert np.array_equal(trajectories[0].control_points, result.trajectories[0].control_points)
    assert np.array_equal(trajectories[0].knots, result.trajectories[0].knots)


def test_malformed_trajectory_file(tmp_path):
    path = tmp_path / "traj.json"
    path.write_text(json.dumps({"knots": [0, 1]}))
    with pytest.raises(ValueError, match="malformed"):
        load_trajectories(str(path))


def test_cli_generates_plans_and_validates(tmp_path):
    mission, traj, csv = tmp_path / "mission.json", tmp_path / "traj.json", tmp_path / "series.csv"
    assert main(["gen-mission", "--agents", "2", "--trees", "0", "--out", str(mission)]) == EXIT_OK
    assert main(["plan", "--mission", str(mission), "--out", str(traj), "--csv", str(csv)]) == EXIT_OK
    assert traj.exists() and csv.exists()
    report = tmp_path / "report.json"
    assert main(["validate", "--traj", str(traj), "--mission", str(mission), "--report", str(report)]) == EXIT_OK
    assert json.loads(report.read_text())["passed"] is True


def test_cli_generates_a_forest(tmp_path):
    out = tmp_path / "forest.json"
    assert main(["gen-forest", "--seed", "4", "--trees", "5", "--out", str(out)]) == EXIT_OK
    assert len(json.loads(out.read_text())["obstacles"]) == 5


def test_cli_reports_input_errors(tmp_path):
    assert main(["plan", "--mission", str(tmp_path / "missing.json"), "--out", str(tmp_path / "t.json")]) == EXIT_INPUT


def test_cli_reports_planning_failures(tmp_path):
    world = OccupancyWorld(Box((0, 0, 0), (4, 4, 2)), (Box((1.9, 0.0, 0.0), (2.1, 4.0, 2.0)),))
    mission = tmp_path / "mission.json"
    save_mission(mission_in(world, ((1.0, 1.0, 1.0), (3.0, 1.0, 1.0))), str(mission))
    assert main(["plan", "--mission", str(mission), "--out", str(tmp_path / "t.json")]) == EXIT_FAILED


def test_cli_bench_validates_the_batch_size(tmp_path, caplog):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--agents", "2", "--seeds", "1", "--batch-size", "0", "--out", str(out)]) == EXIT_INPUT
    assert "batch_size" in caplog.text
    assert not out.exists()


def discrete_stages(mission):
    grid = build_grid(mission.world, DEFAULT_GRID_SIZE, max(mission.radii))
    plans = plan_ecbs([grid] * len(mission.agents), mission.starts, mission.goals)
    plans = attach_endpoints(plans, mission.starts, mission.goals, mission.world, mission.radii)
    corridors = build_corridors(plans, mission.world, mission.radii)
    knots = initial_knots(plans[0].makespan, DEFAULT_GRID_SIZE, DEFAULT_V_MAX)
    return plans, corridors, knots


def solve_all(plans, corridors, knots, num_batches):
    stats = []
    traj_opt(plans, corridors, num_batches, knots, stats=stats)
    assert len(stats) == num_batches
    assert all(s.status == "optimal" and not s.retried for s in stats)
    return stats


@pytest.mark.slow
def test_eight_antipodal_agents_in_open_space(empty_world):
    result = plan(gen_mission(8, world=empty_world))
    assert result.report.passed
    assert result.report.min_inter_margin_ratio >= 100.0


@pytest.mark.slow
def test_sixteen_agents_plan_within_a_minute():
    result = plan(gen_mission(16, seed=0, n_trees=20))
    assert result.report.passed
    assert result.stage_times["optimizer"] < 60.0


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(200))
def test_every_batch_qp_is_feasible_and_solved(seed):
    rng = np.random.default_rng(seed)
    n_agents = int(rng.integers(2, 17))
    mission = gen_mission(n_agents, seed=seed, n_trees=int(rng.integers(0, 21)))
    plans, corridors, knots = discrete_stages(mission)
    dummies = {p.agent_id: plan_dummy(p, 5, 3, knots) for p in plans}
    num_batches = int(rng.integers(1, n_agents + 1))
    for batch in partition_batches(range(n_agents), num_batches):
        problem = assemble_batch_qp(batch, plans, corridors, dummies, knots)
        assert constraint_violation(problem, witness_vector(problem, dummies)) <= 1e-9
    solve_all(plans, corridors, knots, num_batches)


@pytest.mark.slow
@pytest.mark.parametrize("radius", [0.10, 0.15, 0.20, 0.25])
def test_sixteen_agents_succeed_in_every_forest(radius):
    results = run_benchmark([16], range(50), PlannerConfig(batch_size=4), radius=radius)
    failures = results.loc[~results["success"], ["seed", "failed_stage"]]
    assert failures.empty, failures.to_string()
    assert (results["margin_ratio"] > 100.0).all()


@pytest.mark.slow
def test_batching_trades_cost_for_batch_time():
    costs = {1: [], 4: []}
    batch_times = {1: [], 4: [], 16: []}
    for seed in range(10):
        plans, corridors, knots = discrete_stages(gen_mission(16, seed=seed))
        for num_batches in (1, 4, 16):
            stats = solve_all(plans, corridors, knots, num_batches)
            batch_times[num_batches].append(np.mean([s.solve_time for s in stats]))
            if num_batches in costs:
                costs[num_batches].append(sum(s.objective for s in stats))
    assert np.mean(costs[4]) >= np.mean(costs[1]) * (1 - 1e-6)
    mean_times = [np.mean(batch_times[b]) for b in (1, 4, 16)]
    assert mean_times[0] > mean_times[1] > mean_times[2]


@pytest.mark.slow
def test_fixed_batch_size_scales_below_cubic():
    optimizer_time = {}
    for n_agents in (4, 8, 16, 32):
        times = []
        for seed in range(3):
            plans, corridors, knots = discrete_stages(gen_mission(n_agents, seed=seed))
            stats = solve_all(plans, corridors, knots, PlannerConfig(batch_size=4).batches_for(n_agents))
            times.append(sum(s.solve_time for s in stats))
        optimizer_time[n_agents] = np.mean(times)
    assert optimizer_time[32] < optimizer_time[4] * (32 / 4) ** 3
    assert optimizer_time[32] > optimizer_time[4]


@pytest.mark.slow
def test_forest_benchmark():
    results = run_benchmark([4, 8], range(3), PlannerConfig(batch_size=4))
    assert results["success"].all()
    assert (results["margin_ratio"] > 100.0).all()
    summary = summarize_benchmark(results)
    assert summary["success_rate"].tolist() == [1.0, 1.0]
    assert summary["runs"].tolist() == [3, 3]
