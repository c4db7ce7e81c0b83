import argparse
import dataclasses
import logging
import sys
from typing import List, Optional

from swarm_planner.consts import (
    DEFAULT_RADIUS,
    DUMP_DIR,
    FOREST_N_TREES,
    FOREST_TREE_H_RANGE,
    FOREST_TREE_XY,
    PLANNER_CONFIG_PATH,
)
from swarm_planner.exceptions import PlannerError, PlanningFailed
from swarm_planner.json_utils import write_json_file
from swarm_planner.occupancy_map import load_world, save_world
from swarm_planner.pipeline import (
    PlannerConfig,
    load_config,
    load_trajectories,
    plan,
    run_benchmark,
    save_trajectories,
    summarize_benchmark,
)
from swarm_planner.scenario import gen_forest, gen_mission, load_mission, save_mission
from swarm_planner.validate import format_report, validate, write_time_series_csv

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2


def _config(args) -> PlannerConfig:
    if args.config:
        return load_config(args.config, args.profile)
    if args.profile:
        return load_config(PLANNER_CONFIG_PATH, args.profile)
    return PlannerConfig()


def cmd_plan(args) -> int:
    mission = load_mission(args.mission)
    config = _config(args)
    dump_dir = (args.dump_qp or DUMP_DIR) if args.dump_qp is not None else None
    try:
        result = plan(mission, config, dump_dir=dump_dir, dump_corridors=args.dump_corridors)
    except PlanningFailed as e:
        logging.error(f"Planning failed at stage '{e.stage}': {e}")
        return EXIT_FAILED
    save_trajectories(result.trajectories, mission.radii, args.out)
    if args.csv:
        write_time_series_csv(result.trajectories, args.csv)
    if args.report:
        write_json_file(result.summary(), args.report)
    print(format_report(result.report))
    return EXIT_OK


def cmd_validate(args) -> int:
    mission = load_mission(args.mission)
    trajectories, radii = load_trajectories(args.traj)
    if len(trajectories) != len(mission.agents):
        logging.error(f"{args.traj} holds {len(trajectories)} agents, the mission has {len(mission.agents)}.")
        return EXIT_INPUT
    config = _config(args)
    report = validate(trajectories, mission.world, radii, mission.v_max, mission.a_max, mission.c_dw, config.phi,
                      args.sample_dt or config.sample_dt, mission.starts, mission.goals)
    if args.report:
        write_json_file(report.to_dict(), args.report)
    print(format_report(report))
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_gen_forest(args) -> int:
    world = gen_forest(args.seed, args.trees, tree_xy=args.tree_xy, tree_h_range=tuple(args.tree_height))
    save_world(world, args.out)
    logging.info(f"World written to {args.out}.")
    return EXIT_OK


def cmd_gen_mission(args) -> int:
    world = load_world(args.world) if args.world else None
    mission = gen_mission(args.agents, seed=args.seed, n_trees=args.trees, world=world, radius=args.radius)
    if args.world_out:
        save_world(mission.world, args.world_out)
    save_mission(mission, args.out, world_ref=args.world_ref)
    logging.info(f"Mission with {len(mission.agents)} agents written to {args.out}.")
    return EXIT_OK


def cmd_bench(args) -> int:
    config = _config(args)
    if args.batch_size is not None:
        config = dataclasses.replace(config, batch_size=args.batch_size)
    agent_counts = [int(v) for v in args.agents.split(",")]
    seeds = range(config.seed, config.seed + args.seeds)
    results = run_benchmark(agent_counts, seeds, config, radius=args.radius, n_trees=args.trees)
    summary = summarize_benchmark(results)
    results.to_csv(args.out, index=False)
    if args.summary:
        summary.to_csv(args.summary, index=False)
    print(summary.to_string(index=False))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swarm-planner", description="Multi-agent quadrotor trajectory planner")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="YAML or JSON planner configuration")
        p.add_argument("--profile", help="Profile inside the configuration file")

    p = sub.add_parser("plan", help="Plan trajectories for a mission")
    p.add_argument("--mission", required=True)
    p.add_argument("--out", required=True, help="Trajectory JSON output")
    p.add_argument("--dump-corridors", help="Write corridors to this JSON file")
    p.add_argument("--dump-qp", nargs="?", const="", default=None,
                   help="Directory receiving a dump of every batch QP")
    p.add_argument("--csv", help="Time series CSV output")
    p.add_argument("--report", help="Run summary JSON output")
    add_config(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("validate", help="Validate a trajectory file against a mission")
    p.add_argument("--traj", required=True)
    p.add_argument("--mission", required=True)
    p.add_argument("--sample-dt", type=float)
    p.add_argument("--report", help="Report JSON output")
    add_config(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen-forest", help="Generate a random forest world")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trees", type=int, default=FOREST_N_TREES)
    p.add_argument("--tree-xy", type=float, default=FOREST_TREE_XY)
    p.add_argument("--tree-height", type=float, nargs=2, default=list(FOREST_TREE_H_RANGE))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_forest)

    p = sub.add_parser("gen-mission", help="Generate an antipodal mission")
    p.add_argument("--agents", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trees", type=int, default=FOREST_N_TREES)
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    p.add_argument("--world", help="Use this world instead of generating a forest")
    p.add_argument("--world-out", help="Also write the world to this file")
    p.add_argument("--world-ref", help="Reference the world by this path instead of inlining it")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_mission)

    p = sub.add_parser("bench", help="Run the forest benchmark")
    p.add_argument("--agents", default="4,8,16", help="Comma separated agent counts")
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    p.add_argument("--trees", type=int, default=FOREST_N_TREES)
    p.add_argument("--out", default="bench.csv")
    p.add_argument("--summary", help="Per agent-count summary CSV")
    add_config(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')
    try:
        return args.func(args)
    except (PlannerError, ValueError, FileNotFoundError) as e:
        logging.error(str(e))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
