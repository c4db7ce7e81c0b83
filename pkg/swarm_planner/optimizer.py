"""Batched corridor-constrained QP with dummy agents, and uniform time scaling.

Each batch QP is

    minimise    c^T Q c
    subject to  A_eq c = b_eq                         (boundary + continuity)
                lo(S^i_m) <= c^i_{m,k} <= hi(S^i_m)   (SFC)
                a^T (c^j_{m,k} - c^i_{m,k}) >= r^i + r^j + margin   (RSFC)

over the stacked control points of the batch agents; every other agent is
fixed at its dummy trajectory or at its already optimised trajectory.

Batches are solved with the Clarabel interior-point method through cvxpy,
falling back to OSQP warm-started at the witness. Every answer is then
repaired: the equality residual is projected away and the result is
blended toward the witness until each inequality holds.
"""
import logging
import math
import os
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import cvxpy as cp
import numpy as np
import osqp
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from swarm_planner.bernstein import (
    PiecewiseBezier,
    binomial_coefficients,
    falling_factorial,
    norm_bound,
    objective_hessian,
)
from swarm_planner.consts import DEFAULT_DEGREE, DEFAULT_PHI, DEFAULT_RSFC_MARGIN, FEASIBILITY_TOL
from swarm_planner.corridor import Corridors
from swarm_planner.exceptions import ConfigurationError, QpSolveError
from swarm_planner.json_utils import write_json_file
from swarm_planner.mapf import DiscretePlan

WITNESS_TOL = 1e-9
SOLVER_TOLERANCE = 1e-8
OSQP_TOLERANCE = 1e-6
SOLVER_MAX_ITER = 200
OSQP_MAX_ITER = 20_000


@dataclass(frozen=True, eq=False)
class QpProblem:
    """Assembled QP for one batch over its stacked decision vector.

    Attributes:
        batch (Tuple[int, ...]): Agent ids of the batch, ascending.
        num_segments (int): M.
        degree (int): n.
        hessian (sp.csc_matrix): Objective matrix Q.
        a_eq, b_eq: Equality system.
        a_ineq, l_ineq, u_ineq: Inequality rows l <= A c <= u (SFC rows first, then RSFC rows).
        num_sfc_rows (int): Number of SFC rows at the top of a_ineq.
    """
    batch: Tuple[int, ...]
    num_segments: int
    degree: int
    hessian: sp.csc_matrix
    a_eq: sp.csc_matrix
    b_eq: np.ndarray
    a_ineq: sp.csc_matrix
    l_ineq: np.ndarray
    u_ineq: np.ndarray
    num_sfc_rows: int

    @property
    def num_variables(self) -> int:
        return self.hessian.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(x @ (self.hessian @ x))


@dataclass
class BatchStats:
    batch: Tuple[int, ...]
    num_variables: int
    num_rows: int
    solve_time: float
    objective: float
    retried: bool = False
    status: str = ""
    blend: float = 1.0


def variable_index(agent: int, m: int, k: int, axis: int, num_segments: int, degree: int) -> int:
    return ((agent * num_segments + m) * (degree + 1) + k) * 3 + axis


def initial_knots(num_segments: int, grid_size: float, v_max: Union[float, Sequence[float]]) -> np.ndarray:
    """Knots giving every discrete step the duration d / v_max (slowest agent)."""
    speed = float(np.min(v_max))
    return np.arange(num_segments + 1) * (grid_size / speed)


def partition_batches(agent_ids: Sequence[int], num_batches: int) -> List[Tuple[int, ...]]:
    """Splits agents, ascending by id, into num_batches contiguous groups."""
    ids = sorted(agent_ids)
    if not 1 <= num_batches <= len(ids):
        raise ConfigurationError(f"number of batches must be within [1, {len(ids)}], got {num_batches}")
    return [tuple(int(a) for a in chunk) for chunk in np.array_split(np.array(ids), num_batches)]


def dummy_control_points(waypoints: np.ndarray, n: int, phi: int) -> np.ndarray:
    """(M, n + 1, 3) control points: phi copies of each end, interior points evenly spaced between."""
    start, end = waypoints[:-1, None, :], waypoints[1:, None, :]
    k = np.arange(n + 1)
    fraction = np.zeros(n + 1)
    middle = (k >= phi) & (k <= n - phi)
    fraction[middle] = (k[middle] - phi + 1) / (n - 2 * phi + 2)
    points = start + fraction[None, :, None] * (end - start)
    points = np.where((k >= n - phi + 1)[None, :, None], end, points)
    return np.where((k < phi)[None, :, None], start, points)


def plan_dummy(plan: DiscretePlan, n: int, phi: int, knots: Sequence[float]) -> PiecewiseBezier:
    """
    Builds the dummy trajectory along a discrete plan.

    Args:
        plan (DiscretePlan): The agent's discrete plan.
        n (int): Polynomial degree.
        phi (int): Objective derivative order.
        knots (Sequence[float]): M + 1 segment times.

    Returns:
        PiecewiseBezier: Trajectory resting at every waypoint.

    Raises:
        ConfigurationError: If n < 2 phi - 1.
    """
    if n < 2 * phi - 1:
        raise ConfigurationError(f"degree {n} is below 2 * phi - 1 = {2 * phi - 1}")
    return PiecewiseBezier.from_control_points(plan.agent_id, dummy_control_points(plan.waypoints, n, phi), knots)


def _difference_weights(q: int) -> List[int]:
    # weights of Delta^q over q + 1 consecutive control points
    return [(-1) ** (q - i) * c for i, c in enumerate(binomial_coefficients(q))]


def _equality_rows(local: int, plan: DiscretePlan, n: int, phi: int, knots: np.ndarray, row0: int):
    num_segments = plan.makespan
    rows, cols, vals, rhs = [], [], [], []
    row = row0

    def index(m, k, axis):
        return variable_index(local, m, k, axis, num_segments, n)

    for q in range(phi):
        weights = _difference_weights(q)
        for at_start, m, first, target in (
                (True, 0, 0, plan.waypoints[0]),
                (False, num_segments - 1, n - q, plan.waypoints[-1])):
            for axis in range(3):
                for i, weight in enumerate(weights):
                    rows.append(row)
                    cols.append(index(m, first + i, axis))
                    vals.append(float(weight))
                rhs.append(float(target[axis]) if q == 0 else 0.0)
                row += 1
        for m in range(1, num_segments):
            left = falling_factorial(n, q) / (knots[m] - knots[m - 1]) ** q
            right = falling_factorial(n, q) / (knots[m + 1] - knots[m]) ** q
            norm = max(left, right)
            for axis in range(3):
                for i, weight in enumerate(weights):
                    rows.extend((row, row))
                    cols.extend((index(m - 1, n - q + i, axis), index(m, i, axis)))
                    vals.extend((weight * left / norm, -weight * right / norm))
                rhs.append(0.0)
                row += 1
    return rows, cols, vals, rhs, row


def assemble_batch_qp(batch: Sequence[int], plans: Sequence[DiscretePlan], corridors: Corridors,
                      fixed: Dict[int, PiecewiseBezier], knots: Sequence[float], degree: int = DEFAULT_DEGREE,
                      phi: int = DEFAULT_PHI, rsfc_margin: float = DEFAULT_RSFC_MARGIN) -> QpProblem:
    """
    Assembles the QP of one batch.

    Args:
        batch (Sequence[int]): Agent ids optimised in this batch.
        plans (Sequence[DiscretePlan]): Plans of all agents, indexed by agent id.
        corridors (Corridors): SFCs and RSFCs of all agents.
        fixed (Dict[int, PiecewiseBezier]): Current trajectories of non-batch agents.
        knots (Sequence[float]): Shared segment times.
        degree (int): n.
        phi (int): Objective derivative order.
        rsfc_margin (float): Closing margin added to every RSFC offset.

    Returns:
        QpProblem: The assembled problem.
    """
    batch = tuple(sorted(batch))
    knots = np.asarray(knots, dtype=float)
    num_segments = len(knots) - 1
    n = degree
    local = {agent: index for index, agent in enumerate(batch)}
    num_vars = len(batch) * num_segments * (n + 1) * 3

    hessian = sp.block_diag(
        [sp.csc_matrix(objective_hessian(n, num_segments, phi, knots)) for _ in batch], format="csc"
    )

    eq_rows, eq_cols, eq_vals, b_eq = [], [], [], []
    row = 0
    for agent in batch:
        rows, cols, vals, rhs, row = _equality_rows(local[agent], plans[agent], n, phi, knots, row)
        eq_rows += rows
        eq_cols += cols
        eq_vals += vals
        b_eq += rhs
    a_eq = sp.csc_matrix((eq_vals, (eq_rows, eq_cols)), shape=(row, num_vars))

    lower, upper = [], []
    for agent in batch:
        for sfc in corridors.sfc[agent]:
            for _ in range(n + 1):
                lower.extend(sfc.box.lower)
                upper.extend(sfc.box.upper)
    num_sfc = len(lower)
    sfc_rows = sp.identity(num_vars, format="csc")

    in_rows, in_cols, in_vals = [], [], []
    row = 0
    for (i, j), halfspaces in sorted(corridors.rsfc.items()):
        if i not in local and j not in local:
            continue
        for rsfc in halfspaces:
            m = rsfc.segment - 1
            a = rsfc.coefficients
            for k in range(n + 1):
                bound = rsfc.offset + rsfc_margin
                for agent, sign in ((i, -1.0), (j, 1.0)):
                    if agent in local:
                        for axis in range(3):
                            in_rows.append(row)
                            in_cols.append(variable_index(local[agent], m, k, axis, num_segments, n))
                            in_vals.append(sign * a[axis])
                    else:
                        bound -= sign * float(a @ fixed[agent].segments[m].control_points[k])
                lower.append(bound)
                upper.append(np.inf)
                row += 1
    rsfc_rows = sp.csc_matrix((in_vals, (in_rows, in_cols)), shape=(row, num_vars))

    return QpProblem(
        batch=batch,
        num_segments=num_segments,
        degree=n,
        hessian=hessian,
        a_eq=a_eq,
        b_eq=np.array(b_eq),
        a_ineq=sp.vstack([sfc_rows, rsfc_rows], format="csc"),
        l_ineq=np.array(lower, dtype=float),
        u_ineq=np.array(upper, dtype=float),
        num_sfc_rows=num_sfc,
    )


def witness_vector(problem: QpProblem, dummies: Dict[int, PiecewiseBezier]) -> np.ndarray:
    """Stacks the dummy control points of the batch agents into a decision vector."""
    return np.concatenate([dummies[agent].control_points.ravel() for agent in problem.batch])


def constraint_violation(problem: QpProblem, x: np.ndarray) -> float:
    """Largest equality residual or inequality violation of x (0 when feasible)."""
    eq = np.abs(problem.a_eq @ x - problem.b_eq)
    values = problem.a_ineq @ x
    ineq = np.maximum(problem.l_ineq - values, 0.0)
    finite = np.isfinite(problem.u_ineq)
    ineq_upper = np.maximum(values[finite] - problem.u_ineq[finite], 0.0)
    return float(max(eq.max(initial=0.0), ineq.max(initial=0.0), ineq_upper.max(initial=0.0)))


def _osqp_settings(warm: bool) -> Dict[str, object]:
    settings = {
        "verbose": False,
        "eps_abs": OSQP_TOLERANCE,
        "eps_rel": OSQP_TOLERANCE,
        "max_iter": OSQP_MAX_ITER,
        "adaptive_rho": True,
    }
    major = int(str(getattr(osqp, "__version__", "0")).split(".")[0] or 0)
    if major >= 1:
        settings.update({"polishing": True, "warm_starting": warm})
    else:
        settings.update({"polish": True, "warm_start": warm})
    return settings


def _scaled_hessian(problem: QpProblem) -> sp.csc_matrix:
    scale = max(abs(problem.hessian).max(), 1e-12)
    return (problem.hessian / scale).tocsc()


def _run_interior_point(problem: QpProblem) -> Tuple[Optional[np.ndarray], str]:
    """Solves the batch QP with Clarabel; SFC rows enter as variable bounds."""
    x = cp.Variable(problem.num_variables)
    sfc = problem.num_sfc_rows
    constraints = [
        problem.a_eq @ x == problem.b_eq,
        x >= problem.l_ineq[:sfc],
        x <= problem.u_ineq[:sfc],
    ]
    if problem.a_ineq.shape[0] > sfc:
        constraints.append(problem.a_ineq.tocsr()[sfc:] @ x >= problem.l_ineq[sfc:])
    qp = cp.Problem(cp.Minimize(cp.quad_form(x, cp.psd_wrap(_scaled_hessian(problem)))), constraints)
    try:
        qp.solve(solver=cp.CLARABEL, tol_feas=SOLVER_TOLERANCE, tol_gap_abs=SOLVER_TOLERANCE,
                 tol_gap_rel=SOLVER_TOLERANCE, max_iter=SOLVER_MAX_ITER)
    except cp.error.SolverError as error:
        return None, f"solver error: {error}"
    if qp.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or x.value is None:
        return None, str(qp.status)
    return np.asarray(x.value, dtype=float), str(qp.status)


def _run_osqp(problem: QpProblem, warm_start: Optional[np.ndarray]) -> Tuple[Optional[np.ndarray], str]:
    P = sp.triu(_scaled_hessian(problem), format="csc")
    A = sp.vstack([problem.a_eq, problem.a_ineq], format="csc")
    lower = np.concatenate([problem.b_eq, problem.l_ineq])
    upper = np.concatenate([problem.b_eq, problem.u_ineq])
    solver = osqp.OSQP()
    solver.setup(P=P, q=np.zeros(problem.num_variables), A=A, l=lower, u=upper,
                 **_osqp_settings(warm_start is not None))
    if warm_start is not None:
        solver.warm_start(x=warm_start)
    result = solver.solve()
    status = str(result.info.status)
    if result.x is None or not np.all(np.isfinite(result.x)):
        return None, status
    return np.asarray(result.x, dtype=float), status


def restore_feasibility(problem: QpProblem, x: np.ndarray, witness: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Pulls a solver answer into the feasible set.

    The equality residual is removed by the minimum-norm correction, then the
    answer is blended toward the witness just enough for every inequality to
    hold within half the feasibility tolerance. Both end points satisfy the
    equalities, so the blend does too.

    Returns:
        Tuple[np.ndarray, float]: The repaired vector and the blend factor
        (1 keeps the corrected answer, 0 returns the witness).
    """
    residual = problem.b_eq - problem.a_eq @ x
    if residual.size:
        gram = (problem.a_eq @ problem.a_eq.T).tocsc()
        x = x + problem.a_eq.T @ spla.spsolve(gram, residual)
    values = problem.a_ineq @ x
    anchor = problem.a_ineq @ witness
    tol = 0.5 * FEASIBILITY_TOL
    blend = 1.0
    for bound, sign in ((problem.l_ineq, 1.0), (problem.u_ineq, -1.0)):
        rows = np.isfinite(bound)
        rows[rows] = sign * (values[rows] - bound[rows]) < -tol
        if np.any(rows):
            room = sign * (anchor[rows] - bound[rows]) + tol
            drop = sign * (anchor[rows] - values[rows])
            blend = min(blend, float(np.min(room / drop)))
    blend = max(blend, 0.0)
    return witness + blend * (x - witness), blend


def dump_problem(problem: QpProblem, path: str) -> None:
    """Writes the problem matrices as COO triplets to a JSON file."""
    def coo(matrix):
        matrix = matrix.tocoo()
        return {"shape": list(matrix.shape), "row": matrix.row, "col": matrix.col, "data": matrix.data}

    write_json_file({
        "batch": list(problem.batch),
        "hessian": coo(problem.hessian),
        "a_eq": coo(problem.a_eq),
        "b_eq": problem.b_eq,
        "a_ineq": coo(problem.a_ineq),
        "l_ineq": [None if not np.isfinite(v) else v for v in problem.l_ineq],
        "u_ineq": [None if not np.isfinite(v) else v for v in problem.u_ineq],
    }, path)


def solve_batch_qp(batch: Sequence[int], corridors: Corridors, dummies: Dict[int, PiecewiseBezier],
                   plans: Sequence[DiscretePlan], knots: Sequence[float], degree: int = DEFAULT_DEGREE,
                   phi: int = DEFAULT_PHI, fixed: Optional[Dict[int, PiecewiseBezier]] = None,
                   rsfc_margin: float = DEFAULT_RSFC_MARGIN, dump_dir: Optional[str] = None,
                   stats: Optional[List[BatchStats]] = None) -> Dict[int, PiecewiseBezier]:
    """
    Solves the QP of one batch.

    Args:
        batch (Sequence[int]): Agents optimised now.
        corridors (Corridors): Corridors of all agents.
        dummies (Dict[int, PiecewiseBezier]): Dummy trajectory of every agent;
            they fix non-batch agents unless `fixed` overrides them and serve
            as the feasibility witness of the batch agents.
        plans (Sequence[DiscretePlan]): Plans of all agents.
        knots (Sequence[float]): Shared segment times.
        degree (int): n.
        phi (int): Objective derivative order.
        fixed (Optional[Dict[int, PiecewiseBezier]]): Already optimised trajectories.
        rsfc_margin (float): RSFC closing margin in meters.
        dump_dir (Optional[str]): Directory receiving a dump of the problem; on failure
            SWARM_PLANNER_DUMP_DIR is used when this is not given.
        stats (Optional[List[BatchStats]]): Receives solve statistics.

    Returns:
        Dict[int, PiecewiseBezier]: Optimised trajectory per batch agent.

    Raises:
        QpSolveError: If the witness is infeasible or both solvers fail.
    """
    current = dict(dummies)
    current.update(fixed or {})
    problem = assemble_batch_qp(batch, plans, corridors, current, knots, degree, phi, rsfc_margin)
    path = _maybe_dump(problem, dump_dir)
    witness = witness_vector(problem, dummies)
    slack = constraint_violation(problem, witness)
    if slack > WITNESS_TOL:
        path = path or _maybe_dump(problem, os.getenv("SWARM_PLANNER_DUMP_DIR"))
        raise QpSolveError(f"dummy witness violates batch {problem.batch} constraints by {slack:.3e}"
                           + (f"; problem written to {path}" if path else ""), stage="optimizer")
    logging.info(
        f"Solving batch {problem.batch}: {problem.num_variables} variables, "
        f"{problem.a_eq.shape[0]} equalities, {problem.a_ineq.shape[0]} inequalities."
    )
    started = time.perf_counter()
    retried = False
    x, status = _run_interior_point(problem)
    if x is None:
        logging.warning(f"Batch {problem.batch} solve ended with status '{status}'; "
                        f"retrying with OSQP from the witness.")
        retried = True
        x, status = _run_osqp(problem, witness)
    blend = 0.0
    if x is not None:
        x, blend = restore_feasibility(problem, x, witness)
        if blend < 1.0:
            logging.warning(f"Batch {problem.batch} answer blended toward the witness with factor {blend:.6f}.")
    if x is None or constraint_violation(problem, x) > FEASIBILITY_TOL:
        path = path or _maybe_dump(problem, os.getenv("SWARM_PLANNER_DUMP_DIR"))
        raise QpSolveError(
            f"QP of batch {problem.batch} failed with status '{status}'"
            + (f"; problem written to {path}" if path else ""),
            stage="optimizer",
        )
    elapsed = time.perf_counter() - started
    objective = problem.objective(x)
    logging.info(f"Batch {problem.batch} solved in {elapsed:.3f} s ({status}), objective {objective:.6g}.")
    if stats is not None:
        stats.append(BatchStats(problem.batch, problem.num_variables,
                                problem.a_eq.shape[0] + problem.a_ineq.shape[0], elapsed, objective,
                                retried, status, blend))
    points = x.reshape(len(problem.batch), problem.num_segments, problem.degree + 1, 3)
    return {
        agent: PiecewiseBezier.from_control_points(agent, points[index], knots)
        for index, agent in enumerate(problem.batch)
    }


def _maybe_dump(problem: QpProblem, dump_dir: Optional[str]) -> Optional[str]:
    if not dump_dir:
        return None
    path = os.path.join(dump_dir, f"qp_batch_{'_'.join(str(a) for a in problem.batch)}.json")
    dump_problem(problem, path)
    return path


def check_fixed_pairs(corridors: Corridors, trajectories: Dict[int, PiecewiseBezier], skip: Sequence[int],
                      rsfc_margin: float = DEFAULT_RSFC_MARGIN) -> None:
    """Checks every RSFC row whose agents are both outside `skip`."""
    skip = set(skip)
    for (i, j), halfspaces in corridors.rsfc.items():
        if i in skip or j in skip:
            continue
        relative = trajectories[j].control_points - trajectories[i].control_points
        for rsfc in halfspaces:
            worst = float(rsfc.value(relative[rsfc.segment - 1]).min())
            if worst < rsfc_margin - FEASIBILITY_TOL:
                raise QpSolveError(f"fixed pair {(i, j)} violates RSFC {rsfc.segment} by {rsfc_margin - worst:.3e}",
                                   stage="optimizer")


def traj_opt(plans: Sequence[DiscretePlan], corridors: Corridors, num_batches: int, knots: Sequence[float],
             degree: int = DEFAULT_DEGREE, phi: int = DEFAULT_PHI, rsfc_margin: float = DEFAULT_RSFC_MARGIN,
             strict_rsfc: bool = False, dump_dir: Optional[str] = None,
             stats: Optional[List[BatchStats]] = None) -> List[PiecewiseBezier]:
    """
    Optimises all agents batch by batch.

    Agents not yet planned are represented by their dummy trajectories; once
    a batch is solved its trajectories replace the dummies for later batches.

    Args:
        plans (Sequence[DiscretePlan]): Plans of all agents, indexed by agent id.
        corridors (Corridors): Corridors of all agents.
        num_batches (int): N_b, 1 <= N_b <= N.
        knots (Sequence[float]): Shared segment times.
        degree (int): n.
        phi (int): Objective derivative order.
        rsfc_margin (float): RSFC closing margin in meters.
        strict_rsfc (bool): Also re-check RSFC rows between agents fixed in a batch.
        dump_dir (Optional[str]): Directory receiving a dump of every batch QP.
        stats (Optional[List[BatchStats]]): Receives per-batch statistics.

    Returns:
        List[PiecewiseBezier]: One trajectory per agent, ordered by agent id.
    """
    dummies = {plan.agent_id: plan_dummy(plan, degree, phi, knots) for plan in plans}
    planned: Dict[int, PiecewiseBezier] = {}
    for batch in partition_batches([plan.agent_id for plan in plans], num_batches):
        if strict_rsfc:
            current = dict(dummies)
            current.update(planned)
            check_fixed_pairs(corridors, current, batch, rsfc_margin)
        planned.update(solve_batch_qp(batch, corridors, dummies, plans, knots, degree, phi, planned,
                                      rsfc_margin, dump_dir, stats))
    return [planned[agent] for agent in sorted(planned)]


def trajectory_objective(traj: PiecewiseBezier, phi: int = DEFAULT_PHI) -> float:
    """c^T Q c of one trajectory."""
    hessian = objective_hessian(traj.degree, len(traj.segments), phi, traj.knots)
    c = traj.control_points.ravel()
    return float(c @ hessian @ c)


def time_scale(trajs: Sequence[PiecewiseBezier], v_max: Union[float, Sequence[float]],
               a_max: Union[float, Sequence[float]]) -> Tuple[float, List[PiecewiseBezier]]:
    """
    Stretches time uniformly so every agent meets its limits.

    Velocity bounds shrink by 1/k and acceleration bounds by 1/k^2 under
    t -> k t, so the smallest admissible k follows directly from the
    control-point norm bounds of every segment.

    Returns:
        Tuple[float, List[PiecewiseBezier]]: k >= 1 and the retimed trajectories.
    """
    count = len(trajs)
    v_max = np.broadcast_to(np.asarray(v_max, dtype=float), (count,))
    a_max = np.broadcast_to(np.asarray(a_max, dtype=float), (count,))
    k = 1.0
    for traj, v_limit, a_limit in zip(trajs, v_max, a_max):
        speed = max(norm_bound(seg, 1) for seg in traj.segments)
        accel = max(norm_bound(seg, 2) for seg in traj.segments) if traj.degree >= 2 else 0.0
        k = max(k, speed / v_limit, math.sqrt(accel / a_limit))
    if k == 1.0:
        return 1.0, list(trajs)
    logging.info(f"Scaling flight time by {k:.4f}.")
    return k, [traj.retimed(k) for traj in trajs]
