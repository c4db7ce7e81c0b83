import json

import numpy as np
import pytest

from swarm_planner.exceptions import MapFormatError, UnreachableError
from swarm_planner.occupancy_map import (
    Box,
    OccupancyWorld,
    VoxelGrid,
    box_box_distance,
    build_grid,
    grid_neighbors,
    is_segment_free,
    load_world,
    point_box_distance,
    points_free,
    save_world,
    segment_box_distance,
    snap_to_grid,
    world_from_dict,
    world_to_dict,
)


def write(tmp_path, data, name="world.json"):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data))
    return str(path)


def test_load_minimal_world(tmp_path):
    path = write(tmp_path, {"bounds": {"min": [0, 0, 0], "max": [10, 10, 2.5]}, "obstacles": []})
    world = load_world(path)
    assert world.obstacles == ()
    assert world.bounds == Box((0, 0, 0), (10, 10, 2.5))


def test_load_world_with_one_tree(tmp_path):
    path = write(tmp_path, {
        "bounds": {"min": [0, 0, 0], "max": [10, 10, 2.5]},
        "obstacles": [{"min": [1, 1, 0], "max": [1.3, 1.3, 2.0]}],
    })
    assert len(load_world(path).obstacles) == 1


def test_inverted_bounds_are_rejected(tmp_path):
    path = write(tmp_path, {"bounds": {"min": [10, 0, 0], "max": [0, 10, 2.5]}})
    with pytest.raises(MapFormatError):
        load_world(path)


def test_zero_extent_bounds_are_rejected():
    with pytest.raises(MapFormatError):
        world_from_dict({"bounds": {"min": [0, 0, 0], "max": [10, 10, 0]}})


def test_schema_errors_name_the_offending_field(tmp_path):
    path = write(tmp_path, {
        "bounds": {"min": [0, 0, 0], "max": [10, 10, 2.5]},
        "obstacles": [{"min": [1, 1, 0], "max": [2, 2, 1]}, {"min": [1, 1], "max": [2, 2, 1]}],
    })
    with pytest.raises(MapFormatError, match=r"obstacles\[1\]\.min"):
        load_world(path)


def test_syntax_errors_carry_the_position(tmp_path):
    path = write(tmp_path, '{"bounds": {"min": [0, 0, 0],\n "max": [1, 1, 1]}\n,}')
    with pytest.raises(MapFormatError, match=r"world\.json:3:"):
        load_world(path)


def test_obstacles_outside_bounds_are_dropped_with_a_warning(caplog):
    world = world_from_dict({
        "bounds": {"min": [0, 0, 0], "max": [10, 10, 2.5]},
        "obstacles": [{"min": [20, 20, 0], "max": [21, 21, 1]}],
    })
    assert world.obstacles == ()
    assert "outside the bounds" in caplog.text


def test_save_then_load_round_trips(tmp_path):
    world = OccupancyWorld(Box((0, 0, 0), (10, 10, 2.5)),
                           (Box((1.1, 2.2, 0), (1.4, 2.5, 1.7)), Box((5, 5, 0), (5.3, 5.3, 2.5))))
    path = str(tmp_path / "nested" / "world.json")
    save_world(world, path)
    loaded = load_world(path)
    assert loaded == world
    assert world_to_dict(loaded) == world_to_dict(world)


def test_distances():
    assert point_box_distance([3, 0, 0], [0, 0, 0], [1, 1, 1]) == pytest.approx(2.0)
    assert point_box_distance([0.5, 0.5, 0.5], [0, 0, 0], [1, 1, 1]) == 0.0
    assert box_box_distance([0, 0, 0], [1, 1, 1], [[2, 0, 0]], [[3, 1, 1]])[0] == pytest.approx(1.0)
    assert segment_box_distance([-1, 2, 0.5], [2, 2, 0.5], [0, 0, 0], [1, 1, 1]) == pytest.approx(1.0)


def test_segment_box_distance_matches_dense_sampling(rng):
    lo, hi = np.array([0.0, 0.0, 0.0]), np.array([1.0, 0.5, 2.0])
    for _ in range(50):
        a, b = rng.uniform(-3, 3, size=(2, 3))
        s = np.linspace(0, 1, 20001)[:, None]
        sampled = point_box_distance(a + s * (b - a), lo, hi).min()
        exact = segment_box_distance(a, b, lo, hi)
        assert exact <= sampled + 1e-12
        assert exact == pytest.approx(sampled, abs=1e-3)


def test_empty_world_segments_are_free(empty_world):
    assert is_segment_free(empty_world, [1, 1, 1], [9, 9, 2], 0.15)


def test_segment_through_obstacle_is_not_free():
    world = OccupancyWorld(Box((0, 0, 0), (10, 10, 2.5)), (Box((4, 4, 0), (6, 6, 2.5)),))
    assert not is_segment_free(world, [1, 5, 1], [9, 5, 1], 0.15)


def test_segment_near_inflated_face():
    world = OccupancyWorld(Box((0, 0, 0), (10, 10, 2.5)), (Box((4, 4, 0), (6, 6, 2.5)),))
    r = 0.2
    assert is_segment_free(world, [1, 4 - r - 0.01, 1], [9, 4 - r - 0.01, 1], r)
    assert not is_segment_free(world, [1, 4 - r + 0.01, 1], [9, 4 - r + 0.01, 1], r)


def test_segment_leaving_shrunk_bounds_is_not_free(empty_world):
    assert not is_segment_free(empty_world, [0.1, 5, 1], [5, 5, 1], 0.15)


def test_inflation_monotonicity(pillar_world, rng):
    for _ in range(30):
        a, b = rng.uniform(0.5, 3.5, size=(2, 3)) * [1, 1, 0.4]
        if is_segment_free(pillar_world, a, b, 0.3):
            assert is_segment_free(pillar_world, a, b, 0.2)
            assert is_segment_free(pillar_world, a, b, 0.0)


def test_empty_world_grid_is_all_free(empty_world):
    grid = build_grid(empty_world, 0.5, 0.0)
    assert grid.dims == (21, 21, 6)
    assert grid.free_count == 21 * 21 * 6


def test_radius_blocks_the_boundary_planes(empty_world):
    grid = build_grid(empty_world, 0.5, 0.15)
    assert grid.blocked[0].all() and grid.blocked[-1].all()
    assert not grid.blocked[1, 1, 1]


def test_fully_obstructed_world():
    world = OccupancyWorld(Box((0, 0, 0), (4, 4, 2)), (Box((0, 0, 0), (4, 4, 2)),))
    assert build_grid(world, 0.5, 0.1).free_count == 0


def test_blocking_matches_brute_force(pillar_world):
    r = 0.3
    grid = build_grid(pillar_world, 0.5, r)
    pillar = pillar_world.obstacles[0]
    for index in np.ndindex(*grid.dims):
        p = grid.position(index)
        inside = np.all(p >= r - 1e-9) and np.all(p <= pillar_world.bounds.hi - r + 1e-9)
        expected = not inside or point_box_distance(p, pillar.lo, pillar.hi) < r
        assert grid.blocked[index] == expected


def test_free_cells_pass_the_segment_test(pillar_world):
    grid = build_grid(pillar_world, 0.5, 0.2)
    for index in zip(*np.nonzero(~grid.blocked)):
        p = grid.position(index)
        assert is_segment_free(pillar_world, p, p, 0.2)


def test_edges_between_free_points_pass_the_segment_test(pillar_world):
    grid = build_grid(pillar_world, 0.5, 0.2)
    for index in zip(*np.nonzero(~grid.blocked)):
        for neighbor in grid_neighbors(grid, index):
            assert is_segment_free(pillar_world, grid.position(index), grid.position(neighbor), 0.2)


def test_corner_clipping_edge_is_blocked():
    world = OccupancyWorld(Box((0, 0, 0), (3, 3, 2)), (Box((1.1, 2.12, 0.0), (1.4, 3.0, 2.0)),))
    grid = build_grid(world, 0.5, 0.15)
    a, b = (2, 4, 2), (3, 4, 2)
    assert not grid.blocked[a] and not grid.blocked[b]
    assert not is_segment_free(world, grid.position(a), grid.position(b), 0.15)
    assert b not in grid_neighbors(grid, a)
    assert a not in grid_neighbors(grid, b)
    assert (2, 3, 2) in grid_neighbors(grid, a)


def test_edge_mask_shape_is_checked():
    with pytest.raises(MapFormatError, match="edge mask"):
        VoxelGrid(np.zeros(3), 0.5, (2, 2, 2), np.zeros((2, 2, 2)), 0.1, np.zeros((2, 2, 2)))


@pytest.mark.parametrize("d", [0.0, -0.5, 3.0])
def test_invalid_grid_size(small_world, d):
    with pytest.raises(MapFormatError):
        build_grid(small_world, d, 0.1)


def test_snap_exact_and_nearest(small_world):
    grid = build_grid(small_world, 0.5, 0.15)
    assert snap_to_grid(grid, [1.0, 1.5, 1.0]) == (2, 3, 2)
    assert snap_to_grid(grid, [1.1, 1.4, 0.9]) == (2, 3, 2)


def test_snap_skips_blocked_nearest_point():
    world = OccupancyWorld(Box((0, 0, 0), (4, 4, 2)), (Box((1.9, 1.9, 0), (2.1, 2.1, 2)),))
    grid = build_grid(world, 0.5, 0.15)
    assert grid.blocked[4, 4, 2]
    index = snap_to_grid(grid, [2.05, 2.0, 1.0])
    assert index == (5, 4, 2)


def test_snap_ties_break_by_index():
    grid = build_grid(OccupancyWorld(Box((0, 0, 0), (4, 4, 2))), 0.5, 0.15)
    assert snap_to_grid(grid, [1.25, 1.0, 1.0]) == (2, 2, 2)


def test_snap_fails_when_nothing_free_nearby():
    world = OccupancyWorld(Box((0, 0, 0), (4, 4, 2)), (Box((0, 0, 0), (4, 4, 2)),))
    grid = build_grid(world, 0.5, 0.1)
    with pytest.raises(UnreachableError):
        snap_to_grid(grid, [2, 2, 1])


def test_points_free(pillar_world):
    free = points_free(pillar_world, [[1, 1, 1], [2, 2, 1], [0.05, 1, 1]], 0.1)
    assert free.tolist() == [True, False, False]
