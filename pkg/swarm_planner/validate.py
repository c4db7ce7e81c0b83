"""Post-hoc verification of planned trajectories.

Everything here is evaluated with its own routines, never through the
Bernstein evaluation the optimizer uses: exact costs and continuity come
from power-basis polynomials (`numpy.polynomial`), and dense samples from a
local de Casteljau evaluator.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from numpy.polynomial import Polynomial

from swarm_planner.bernstein import BernsteinSegment, PiecewiseBezier
from swarm_planner.consts import DEFAULT_C_DW, DEFAULT_PHI, FEASIBILITY_TOL, LIMIT_SLACK, SAMPLES_PER_TRAJECTORY
from swarm_planner.exceptions import ValidationFailure
from swarm_planner.occupancy_map import Box, OccupancyWorld, box_is_free


@dataclass
class ValidationReport:
    """Safety and quality metrics of a set of trajectories.

    Sampled checks decide `passed`; hull (control-point) checks are
    conservative and reported alongside.
    """
    total_time: float
    obstacle_clear: bool
    min_obstacle_margin: float
    hull_obstacle_clear: bool
    min_inter_margin_ratio: float
    closest_pair: Optional[List[int]]
    max_speed: List[float]
    max_accel: List[float]
    hull_max_speed: List[float]
    hull_max_accel: List[float]
    limits_ok: bool
    objective_cost: float
    flight_distances: List[float]
    total_flight_distance: float
    continuity_errors: List[float] = field(default_factory=list)
    boundary_error: float = 0.0

    @property
    def passed(self) -> bool:
        return self.obstacle_clear and self.min_inter_margin_ratio > 100.0 and self.limits_ok

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["passed"] = self.passed
        if not math.isfinite(self.min_inter_margin_ratio):
            data["min_inter_margin_ratio"] = None
        if not math.isfinite(self.min_obstacle_margin):
            data["min_obstacle_margin"] = None
        return data

    def raise_for_failure(self) -> None:
        """Raises ValidationFailure naming every failed safety flag."""
        failures = []
        if not self.obstacle_clear:
            failures.append(f"obstacle margin {self.min_obstacle_margin:.6f} m")
        if self.min_inter_margin_ratio <= 100.0:
            failures.append(f"inter-agent margin ratio {self.min_inter_margin_ratio:.2f}% for pair {self.closest_pair}")
        if not self.limits_ok:
            failures.append("dynamic limits exceeded")
        if failures:
            raise ValidationFailure("; ".join(failures), stage="validate")


def power_polynomials(seg: BernsteinSegment) -> List[Polynomial]:
    """Per-axis power-basis polynomials of a segment in normalised time tau."""
    n = seg.degree
    tau = Polynomial([0.0, 1.0])
    basis = [math.comb(n, k) * tau ** k * (1 - tau) ** (n - k) for k in range(n + 1)]
    return [sum((float(c) * b for c, b in zip(seg.control_points[:, axis], basis)), Polynomial([0.0]))
            for axis in range(3)]


def _derivative_at(polys: List[Polynomial], duration: float, order: int, tau: float) -> np.ndarray:
    return np.array([p.deriv(order)(tau) if order else p(tau) for p in polys]) / duration ** order


def _hodograph(seg: BernsteinSegment, order: int) -> np.ndarray:
    """Control points of the order-th derivative (empty past the degree)."""
    points = np.asarray(seg.control_points, dtype=float)
    n = seg.degree
    for level in range(order):
        points = (n - level) * np.diff(points, axis=0) / seg.duration
    return points


def _casteljau(points: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """De Casteljau evaluation; equal control points give that point exactly."""
    work = np.broadcast_to(points, (len(tau),) + points.shape).copy()
    tau = tau[:, None, None]
    for _ in range(len(points) - 1):
        work = work[:, :-1] + tau * (work[:, 1:] - work[:, :-1])
    return work[:, 0]


def sample_trajectory(traj: PiecewiseBezier, ts, order: int = 0) -> np.ndarray:
    """
    Samples the order-th derivative of a trajectory at times ts.

    Times outside the trajectory hold the end state with zero derivatives.

    Returns:
        np.ndarray: (len(ts), 3) values.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    knots = traj.knots
    clipped = np.clip(ts, knots[0], knots[-1])
    index = np.clip(np.searchsorted(knots, clipped, side="right") - 1, 0, len(traj.segments) - 1)
    values = np.zeros((len(ts), 3))
    for m in np.unique(index):
        seg = traj.segments[m]
        points = _hodograph(seg, order)
        if not len(points):
            continue
        mask = index == m
        values[mask] = _casteljau(points, (clipped[mask] - seg.t_start) / seg.duration)
    if order:
        values[(ts < knots[0]) | (ts > knots[-1])] = 0.0
    return values


def trajectory_cost(traj: PiecewiseBezier, phi: int = DEFAULT_PHI) -> float:
    """Integral of the squared phi-th derivative, by exact polynomial integration."""
    total = 0.0
    for seg in traj.segments:
        duration = seg.duration
        for poly in power_polynomials(seg):
            antiderivative = (poly.deriv(phi) ** 2).integ()
            total += (antiderivative(1.0) - antiderivative(0.0)) / duration ** (2 * phi - 1)
    return float(total)


def flight_distance(traj: PiecewiseBezier, samples: int = SAMPLES_PER_TRAJECTORY) -> float:
    """Arc length by polyline through `samples` evenly spaced points."""
    ts = np.linspace(traj.knots[0], traj.knots[-1], samples)
    points = sample_trajectory(traj, ts)
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def continuity_residuals(traj: PiecewiseBezier, phi: int = DEFAULT_PHI) -> List[float]:
    """Largest jump of derivatives 0..phi-1 at each interior knot."""
    residuals = []
    for left, right in zip(traj.segments[:-1], traj.segments[1:]):
        left_polys, right_polys = power_polynomials(left), power_polynomials(right)
        jump = 0.0
        for order in range(phi):
            a = _derivative_at(left_polys, left.duration, order, 1.0)
            b = _derivative_at(right_polys, right.duration, order, 0.0)
            jump = max(jump, float(np.abs(a - b).max()))
        residuals.append(jump)
    return residuals


def boundary_residual(traj: PiecewiseBezier, start, goal, phi: int = DEFAULT_PHI) -> float:
    """Deviation from rest at the start and goal positions."""
    first, last = traj.segments[0], traj.segments[-1]
    first_polys, last_polys = power_polynomials(first), power_polynomials(last)
    error = max(
        float(np.abs(_derivative_at(first_polys, first.duration, 0, 0.0) - np.asarray(start)).max()),
        float(np.abs(_derivative_at(last_polys, last.duration, 0, 1.0) - np.asarray(goal)).max()),
    )
    for order in range(1, phi):
        error = max(error,
                    float(np.abs(_derivative_at(first_polys, first.duration, order, 0.0)).max()),
                    float(np.abs(_derivative_at(last_polys, last.duration, order, 1.0)).max()))
    return error


def _hull_speed(seg: BernsteinSegment, order: int) -> float:
    points = _hodograph(seg, order)
    return float(np.linalg.norm(points, axis=1).max()) if len(points) else 0.0


def _bounds_margin(world: OccupancyWorld, points: np.ndarray) -> np.ndarray:
    inner = np.minimum(points - world.bounds.lo, world.bounds.hi - points)
    return inner.min(axis=-1)


def validate(trajs: Sequence[PiecewiseBezier], world: OccupancyWorld, radii: Sequence[float],
             v_max: Union[float, Sequence[float]], a_max: Union[float, Sequence[float]],
             c_dw: float = DEFAULT_C_DW, phi: int = DEFAULT_PHI, sample_dt: Optional[float] = None,
             starts: Optional[Sequence] = None, goals: Optional[Sequence] = None) -> ValidationReport:
    """
    Verifies trajectories against the world, each other and dynamic limits.

    Args:
        trajs (Sequence[PiecewiseBezier]): Trajectories indexed by agent id.
        world (OccupancyWorld): The workspace.
        radii (Sequence[float]): Agent radii.
        v_max, a_max: Speed and acceleration limit per agent (or shared).
        c_dw (float): Downwash coefficient of the inter-agent metric.
        phi (int): Derivative order of the objective and continuity checks.
        sample_dt (Optional[float]): Sampling period; total time / 10^4 if None.
        starts, goals (Optional[Sequence]): Expected end points for the boundary check.

    Returns:
        ValidationReport: Violations are report content, nothing is raised.
    """
    count = len(trajs)
    total_time = max(traj.knots[-1] for traj in trajs)
    if sample_dt is not None and sample_dt <= 0:
        raise ValueError(f"sample_dt must be positive, got {sample_dt}")
    dt = sample_dt or total_time / SAMPLES_PER_TRAJECTORY
    ts = np.linspace(0.0, total_time, int(math.ceil(total_time / dt)) + 1)
    v_max = np.broadcast_to(np.asarray(v_max, dtype=float), (count,))
    a_max = np.broadcast_to(np.asarray(a_max, dtype=float), (count,))

    positions = np.stack([sample_trajectory(traj, ts) for traj in trajs])

    obstacle_margin = np.inf
    hull_clear = True
    for agent, traj in enumerate(trajs):
        r = radii[agent]
        margin = np.minimum(world.clearance(positions[agent]), _bounds_margin(world, positions[agent])) - r
        obstacle_margin = min(obstacle_margin, float(margin.min()))
        for seg in traj.segments:
            hull = Box(tuple(seg.control_points.min(axis=0)), tuple(seg.control_points.max(axis=0)))
            hull_clear &= box_is_free(world, hull, r, tol=FEASIBILITY_TOL)

    scale = np.array([1.0, 1.0, 1.0 / c_dw])
    ratio, closest = np.inf, None
    for i in range(count):
        for j in range(i + 1, count):
            distance = np.linalg.norm((positions[j] - positions[i]) * scale, axis=1).min()
            pair_ratio = float(distance / (radii[i] + radii[j]) * 100.0)
            if pair_ratio < ratio:
                ratio, closest = pair_ratio, [i, j]

    max_speed = [float(np.linalg.norm(sample_trajectory(traj, ts, 1), axis=1).max()) for traj in trajs]
    max_accel = [float(np.linalg.norm(sample_trajectory(traj, ts, 2), axis=1).max()) for traj in trajs]
    limits_ok = all(
        s <= v * (1 + LIMIT_SLACK) and a <= am * (1 + LIMIT_SLACK)
        for s, a, v, am in zip(max_speed, max_accel, v_max, a_max)
    )

    distances = [flight_distance(traj) for traj in trajs]
    continuity = np.zeros(max(len(traj.segments) for traj in trajs) - 1)
    for traj in trajs:
        residuals = continuity_residuals(traj, min(phi, traj.degree + 1))
        continuity[:len(residuals)] = np.maximum(continuity[:len(residuals)], residuals)
    boundary = 0.0
    if starts is not None and goals is not None:
        boundary = max(boundary_residual(traj, starts[agent], goals[agent], min(phi, traj.degree + 1))
                       for agent, traj in enumerate(trajs))

    report = ValidationReport(
        total_time=float(total_time),
        obstacle_clear=bool(obstacle_margin >= -FEASIBILITY_TOL),
        min_obstacle_margin=float(obstacle_margin),
        hull_obstacle_clear=bool(hull_clear),
        min_inter_margin_ratio=float(ratio),
        closest_pair=closest,
        max_speed=max_speed,
        max_accel=max_accel,
        hull_max_speed=[max(_hull_speed(seg, 1) for seg in traj.segments) for traj in trajs],
        hull_max_accel=[max(_hull_speed(seg, 2) for seg in traj.segments) for traj in trajs],
        limits_ok=bool(limits_ok),
        objective_cost=float(sum(trajectory_cost(traj, phi) for traj in trajs if traj.degree >= phi)),
        flight_distances=distances,
        total_flight_distance=float(sum(distances)),
        continuity_errors=[float(v) for v in continuity],
        boundary_error=float(boundary),
    )
    logging.info(
        f"Validation {'passed' if report.passed else 'FAILED'}: margin ratio {report.min_inter_margin_ratio:.2f}%, "
        f"obstacle margin {report.min_obstacle_margin:.4f} m, total distance {report.total_flight_distance:.3f} m."
    )
    return report


def format_report(report: ValidationReport) -> str:
    """Human-readable summary followed by a per-agent table."""
    table = pd.DataFrame({
        "max_speed": report.max_speed,
        "hull_speed": report.hull_max_speed,
        "max_accel": report.max_accel,
        "hull_accel": report.hull_max_accel,
        "distance": report.flight_distances,
    })
    table.index.name = "agent"
    lines = [
        f"result:               {'PASS' if report.passed else 'FAIL'}",
        f"total time:           {report.total_time:.4f} s",
        f"obstacle clear:       {report.obstacle_clear} (hull: {report.hull_obstacle_clear}, "
        f"margin {report.min_obstacle_margin:.4f} m)",
        f"min margin ratio:     {report.min_inter_margin_ratio:.2f}% (pair {report.closest_pair})",
        f"limits met:           {report.limits_ok}",
        f"objective cost:       {report.objective_cost:.6g}",
        f"total distance:       {report.total_flight_distance:.4f} m",
        f"max continuity error: {max(report.continuity_errors, default=0.0):.3e}",
        f"boundary error:       {report.boundary_error:.3e}",
        "",
        table.to_string(float_format=lambda v: f"{v:.4f}"),
    ]
    return "\n".join(lines)


def time_series(trajs: Sequence[PiecewiseBezier], sample_dt: Optional[float] = None) -> pd.DataFrame:
    """Positions, velocities and accelerations of every agent on a common time grid."""
    total_time = max(traj.knots[-1] for traj in trajs)
    dt = sample_dt or total_time / 1000
    ts = np.linspace(0.0, total_time, int(math.ceil(total_time / dt)) + 1)
    columns: Dict[str, np.ndarray] = {"t": ts}
    for traj in trajs:
        for prefix, order in (("", 0), ("v", 1), ("a", 2)):
            values = sample_trajectory(traj, ts, order)
            for axis, name in enumerate("xyz"):
                columns[f"agent{traj.agent_id}_{prefix}{name}"] = values[:, axis]
    return pd.DataFrame(columns)


def write_time_series_csv(trajs: Sequence[PiecewiseBezier], path: str, sample_dt: Optional[float] = None) -> None:
    time_series(trajs, sample_dt).to_csv(path, index=False)
    logging.info(f"Time series written to {path}.")
