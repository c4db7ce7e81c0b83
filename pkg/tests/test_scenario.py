import numpy as np
import pytest

from swarm_planner.exceptions import MissionError, ScenarioError
from swarm_planner.occupancy_map import Box, OccupancyWorld, point_box_distance, save_world, world_to_dict
from swarm_planner.scenario import (
    AgentSpec,
    Mission,
    assign_antipodal,
    gen_forest,
    gen_mission,
    load_mission,
    mission_from_dict,
    save_mission,
    validate_mission,
)


def test_forest_is_reproducible():
    assert world_to_dict(gen_forest(11)) == world_to_dict(gen_forest(11))
    assert world_to_dict(gen_forest(11)) != world_to_dict(gen_forest(12))


def test_forest_without_trees():
    assert gen_forest(0, n_trees=0).obstacles == ()


def test_trees_stand_on_the_ground_inside_the_bounds():
    world = gen_forest(5, n_trees=30)
    assert len(world.obstacles) == 30
    for tree in world.obstacles:
        assert np.allclose(tree.extent[:2], 0.3)
        assert tree.lo[2] == 0.0 and 1.0 <= tree.hi[2] <= 2.5
        assert np.all(tree.lo >= world.bounds.lo) and np.all(tree.hi <= world.bounds.hi)


def test_trees_keep_clear_of_reserved_points():
    points = [[5.0, 5.0, 1.0], [2.0, 8.0, 1.0]]
    world = gen_forest(2, n_trees=40, keep_clear=points, keep_clear_radius=1.0)
    for tree in world.obstacles:
        assert np.all(point_box_distance(points, tree.lo, tree.hi) >= 1.0)


@pytest.mark.parametrize("kwargs", [
    {"n_trees": -1},
    {"tree_h_range": (2.0, 1.0)},
    {"tree_h_range": (1.0, 3.0)},
    {"tree_xy": 12.0},
    {"keep_clear": [[5.0, 5.0, 1.0]], "keep_clear_radius": 50.0},
])
def test_invalid_forest_parameters(kwargs):
    with pytest.raises(ScenarioError):
        gen_forest(0, **kwargs)


def test_four_agents_start_at_the_edge_midpoints():
    pairs = assign_antipodal(4)
    starts = [start[:2] for start, _ in pairs]
    assert np.allclose(starts, [(5.0, 0.5), (9.5, 5.0), (5.0, 9.5), (0.5, 5.0)])
    assert all(start[2] == 1.0 and goal[2] == 1.0 for start, goal in pairs)


def test_goals_mirror_the_starts_through_the_center():
    for start, goal in assign_antipodal(7):
        assert np.allclose(np.add(start[:2], goal[:2]), [10.0, 10.0])


def test_sixteen_starts_are_evenly_spaced():
    starts = np.array([start for start, _ in assign_antipodal(16)])
    gaps = np.linalg.norm(starts[:, None] - starts[None], axis=-1)
    np.fill_diagonal(gaps, np.inf)
    assert gaps.min() >= 36.0 / 16 - 1e-9


def test_antipodal_assignment_errors():
    with pytest.raises(ScenarioError):
        assign_antipodal(0)
    with pytest.raises(ScenarioError):
        assign_antipodal(200, radius=0.15)


def test_generated_mission_is_valid_and_clear():
    mission = gen_mission(4, seed=3, n_trees=20)
    assert [agent.id for agent in mission.agents] == [0, 1, 2, 3]
    assert np.allclose(mission.starts + mission.goals, [[10.0, 10.0, 2.0]] * 4)
    for tree in mission.world.obstacles:
        assert np.all(point_box_distance(mission.starts, tree.lo, tree.hi) >= 0.15 + 0.5)


def test_generated_mission_in_a_given_world(small_world):
    mission = gen_mission(2, world=small_world)
    assert mission.world is small_world
    assert np.allclose(mission.starts[0], [2.0, 0.5, 1.0])


def test_mission_round_trip_with_inline_world(tmp_path):
    mission = gen_mission(3, seed=1, n_trees=5)
    path = str(tmp_path / "mission.json")
    save_mission(mission, path)
    loaded = load_mission(path)
    assert loaded.agents == mission.agents
    assert loaded.world == mission.world
    assert loaded.world_path is None


def test_mission_round_trip_with_world_reference(tmp_path):
    mission = gen_mission(3, seed=1, n_trees=5)
    save_world(mission.world, str(tmp_path / "forest.json"))
    save_mission(mission, str(tmp_path / "mission.json"), world_ref="forest.json")
    loaded = load_mission(str(tmp_path / "mission.json"))
    assert loaded.world == mission.world
    assert loaded.world_path == str(tmp_path / "forest.json")


def test_malformed_agent_points_name_the_field(small_world):
    data = {"world": world_to_dict(small_world), "agents": [{"id": 0, "start": [1, 2], "goal": [1, 1, 1]}]}
    with pytest.raises(MissionError, match=r"agents\[0\]\.start"):
        mission_from_dict(data)


def test_missing_world_file_is_a_mission_error(tmp_path):
    data = {"world": "nowhere.json", "agents": [{"id": 0, "start": [1, 1, 1], "goal": [2, 2, 1]}]}
    with pytest.raises(MissionError):
        mission_from_dict(data, str(tmp_path))


def agents(*pairs, radius=0.15):
    return tuple(AgentSpec(i, start, goal, radius) for i, (start, goal) in enumerate(pairs))


def test_valid_mission_passes(small_world):
    validate_mission(Mission(agents(((1, 1, 1), (3, 3, 1)), ((3, 1, 1), (1, 3, 1))), small_world))


@pytest.mark.parametrize("mission_agents, message", [
    ((), "no agents"),
    ((AgentSpec(1, (1, 1, 1), (3, 3, 1)),), "ids"),
    ((AgentSpec(0, (1, 1, 1), (3, 3, 1), radius=0.0),), "positive"),
    (agents(((0.05, 1, 1), (3, 3, 1))), "not obstacle-free"),
    (agents(((1, 1, 1), (3, 3, 1)), ((1.2, 1, 1), (1, 3, 1))), "starts"),
    (agents(((1, 1, 1), (3, 3, 1)), ((1, 1, 1.5), (3, 3, 1.5))), "collide"),
])
def test_invalid_missions(small_world, mission_agents, message):
    with pytest.raises(MissionError, match=message):
        validate_mission(Mission(mission_agents, small_world))


def test_start_inside_an_obstacle_is_rejected(pillar_world):
    mission = Mission(agents(((2.0, 2.0, 1.0), (0.5, 0.5, 1.0))), pillar_world)
    with pytest.raises(MissionError, match="start"):
        validate_mission(mission)


def test_negative_downwash_is_rejected():
    world = OccupancyWorld(Box((0, 0, 0), (4, 4, 2)))
    with pytest.raises(MissionError, match="c_dw"):
        validate_mission(Mission(agents(((1, 1, 1), (3, 3, 1))), world, c_dw=-1.0))
