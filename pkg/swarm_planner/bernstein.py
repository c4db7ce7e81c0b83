"""Bernstein-basis mathematics for piecewise Bezier trajectories.

Decision-vector stacking used throughout the package is agent-major, then
segment, then control-point index, then axis:

    index(agent, m, k, axis) = ((agent * M + m) * (n + 1) + k) * 3 + axis
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

from swarm_planner.consts import GEOMETRY_TOL, MAX_EXACT_DEGREE
from swarm_planner.exceptions import DegreeError, DomainError


@lru_cache(maxsize=None)
def binomial_coefficients(n: int) -> Tuple[int, ...]:
    """
    Returns the row n of Pascal's triangle built with exact integer recurrence.

    Args:
        n (int): Row index, 0 <= n.

    Returns:
        Tuple[int, ...]: C(n, 0), ..., C(n, n).
    """
    if n < 0:
        raise DegreeError(f"binomial row requested for negative degree {n}")
    row = [1]
    for k in range(n):
        row.append(row[k] * (n - k) // (k + 1))
    return tuple(row)


def bernstein_basis(n: int, tau) -> np.ndarray:
    """
    Evaluates all degree-n Bernstein basis polynomials at tau.

    Args:
        n (int): Degree.
        tau (float or array): Normalised time(s) in [0, 1].

    Returns:
        np.ndarray: Shape (..., n + 1), B_{k,n}(tau) along the last axis.
    """
    tau = np.asarray(tau, dtype=float)[..., None]
    k = np.arange(n + 1)
    coeffs = np.array(binomial_coefficients(n), dtype=float)
    return coeffs * tau ** k * (1.0 - tau) ** (n - k)


def difference_matrix(n: int, order: int) -> np.ndarray:
    """
    Builds the forward-difference operator mapping n + 1 control points to
    the n + 1 - order coefficients of Delta^order.

    Args:
        n (int): Degree of the input.
        order (int): Difference order.

    Returns:
        np.ndarray: Integer matrix of shape (n + 1 - order, n + 1).
    """
    diff = np.eye(n + 1)
    for _ in range(order):
        diff = diff[1:] - diff[:-1]
    return diff


def falling_factorial(n: int, order: int) -> float:
    value = 1
    for i in range(order):
        value *= n - i
    return float(value)


@dataclass(frozen=True, eq=False)
class BernsteinSegment:
    """One Bezier segment of degree n on [t_start, t_end].

    Attributes:
        control_points (np.ndarray): (n + 1, 3) control points in meters.
        t_start (float): Segment start time in seconds.
        t_end (float): Segment end time in seconds.
    """
    control_points: np.ndarray
    t_start: float
    t_end: float

    def __post_init__(self):
        points = np.array(self.control_points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 1:
            raise DegreeError(f"control points must have shape (n + 1, 3), got {points.shape}")
        if points.shape[0] - 1 > MAX_EXACT_DEGREE:
            raise DegreeError(f"degree {points.shape[0] - 1} exceeds supported maximum {MAX_EXACT_DEGREE}")
        if not self.t_end > self.t_start:
            raise DomainError(f"segment interval [{self.t_start}, {self.t_end}] is empty")
        points.setflags(write=False)
        object.__setattr__(self, "control_points", points)
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "t_end", float(self.t_end))

    @property
    def degree(self) -> int:
        return self.control_points.shape[0] - 1

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def normalised_time(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        slack = GEOMETRY_TOL * max(1.0, abs(self.t_end))
        if np.any(t < self.t_start - slack) or np.any(t > self.t_end + slack):
            raise DomainError(f"time outside segment interval [{self.t_start}, {self.t_end}]")
        return np.clip((t - self.t_start) / self.duration, 0.0, 1.0)


def evaluate(seg: BernsteinSegment, t) -> np.ndarray:
    """
    Evaluates a segment at time(s) t.

    Args:
        seg (BernsteinSegment): The segment.
        t (float or array): Time(s) in [t_start, t_end].

    Returns:
        np.ndarray: (3,) point, or (len(t), 3) points for array input.

    Raises:
        DomainError: If any t lies outside the segment interval.
    """
    basis = bernstein_basis(seg.degree, seg.normalised_time(t))
    return basis @ seg.control_points


def derivative(seg: BernsteinSegment) -> BernsteinSegment:
    """
    Returns the hodograph of a segment, i.e. its time derivative as a
    degree n - 1 segment over the same interval.

    Raises:
        DegreeError: If the segment has degree 0.
    """
    n = seg.degree
    if n < 1:
        raise DegreeError("cannot differentiate a degree-0 segment")
    points = n * np.diff(seg.control_points, axis=0) / seg.duration
    return BernsteinSegment(points, seg.t_start, seg.t_end)


def nth_derivative(seg: BernsteinSegment, order: int) -> BernsteinSegment:
    for _ in range(order):
        seg = derivative(seg)
    return seg


@lru_cache(maxsize=None)
def _bernstein_gram(m: int) -> np.ndarray:
    # integral over [0, 1] of B_{i,m} B_{j,m}
    c_m = binomial_coefficients(m)
    c_2m = binomial_coefficients(2 * m)
    gram = np.empty((m + 1, m + 1))
    for i in range(m + 1):
        for j in range(m + 1):
            gram[i, j] = c_m[i] * c_m[j] / (c_2m[i + j] * (2 * m + 1))
    return gram


def segment_hessian(n: int, phi: int, duration: float) -> np.ndarray:
    """
    Single-axis Hessian of one segment: c^T H c equals the integral over the
    segment of the squared phi-th time derivative.

    Args:
        n (int): Degree.
        phi (int): Derivative order.
        duration (float): Segment duration in seconds.

    Returns:
        np.ndarray: (n + 1, n + 1) symmetric PSD matrix.
    """
    if phi > n:
        raise DegreeError(f"derivative order {phi} exceeds degree {n}")
    scale = falling_factorial(n, phi) / duration ** phi
    diff = scale * difference_matrix(n, phi)
    hessian = duration * diff.T @ _bernstein_gram(n - phi) @ diff
    return 0.5 * (hessian + hessian.T)


def objective_hessian(n: int, M: int, phi: int = 3, knots: Sequence[float] = ()) -> np.ndarray:
    """
    Builds the Hessian Q of one agent's objective over the stacked control
    points (segment, control point, axis), so that c^T Q c is the sum over
    segments of the integral of the squared phi-th derivative.

    Args:
        n (int): Degree of every segment.
        M (int): Number of segments.
        phi (int): Derivative order, 3 minimises jerk.
        knots (Sequence[float]): M + 1 strictly increasing segment times.

    Returns:
        np.ndarray: (3 M (n + 1), 3 M (n + 1)) symmetric PSD matrix.

    Raises:
        DegreeError: If phi > n.
        DomainError: If knots are not strictly increasing or of wrong length.
    """
    knots = np.asarray(knots, dtype=float)
    if knots.shape != (M + 1,):
        raise DomainError(f"expected {M + 1} knots, got {knots.shape[0] if knots.ndim else 0}")
    if np.any(np.diff(knots) <= 0):
        raise DomainError("knots must be strictly increasing")
    if phi > n:
        raise DegreeError(f"derivative order {phi} exceeds degree {n}")
    size = n + 1
    per_axis = np.zeros((M * size, M * size))
    for m in range(M):
        block = slice(m * size, (m + 1) * size)
        per_axis[block, block] = segment_hessian(n, phi, knots[m + 1] - knots[m])
    return np.kron(per_axis, np.eye(3))


def extremum_bound(seg: BernsteinSegment, derivative_order: int) -> np.ndarray:
    """
    Conservative per-axis bounds of a derivative over the segment from the
    convex hull of its control points.

    Args:
        seg (BernsteinSegment): The segment.
        derivative_order (int): 0 for position, 1 for velocity, ...

    Returns:
        np.ndarray: (3, 2) array of [min, max] per axis.
    """
    if derivative_order > seg.degree:
        raise DegreeError(f"derivative order {derivative_order} exceeds degree {seg.degree}")
    points = nth_derivative(seg, derivative_order).control_points
    return np.stack([points.min(axis=0), points.max(axis=0)], axis=1)


def norm_bound(seg: BernsteinSegment, derivative_order: int) -> float:
    """Upper bound of the derivative's Euclidean norm over the segment."""
    if derivative_order > seg.degree:
        raise DegreeError(f"derivative order {derivative_order} exceeds degree {seg.degree}")
    points = nth_derivative(seg, derivative_order).control_points
    return float(np.linalg.norm(points, axis=1).max())


@dataclass(frozen=True, eq=False)
class PiecewiseBezier:
    """An agent's trajectory made of M contiguous Bezier segments."""
    agent_id: int
    segments: List[BernsteinSegment] = field(default_factory=list)

    def __post_init__(self):
        if not self.segments:
            raise DomainError(f"trajectory of agent {self.agent_id} has no segments")
        degrees = {seg.degree for seg in self.segments}
        if len(degrees) != 1:
            raise DegreeError(f"trajectory of agent {self.agent_id} mixes degrees {sorted(degrees)}")
        for left, right in zip(self.segments[:-1], self.segments[1:]):
            if abs(left.t_end - right.t_start) > GEOMETRY_TOL * max(1.0, abs(left.t_end)):
                raise DomainError(
                    f"segments of agent {self.agent_id} do not tile time: {left.t_end} != {right.t_start}"
                )
        object.__setattr__(self, "segments", list(self.segments))

    @classmethod
    def from_control_points(cls, agent_id: int, control_points, knots: Sequence[float]) -> "PiecewiseBezier":
        """
        Builds a trajectory from an (M, n + 1, 3) array and M + 1 knots.
        """
        control_points = np.asarray(control_points, dtype=float)
        knots = [float(t) for t in knots]
        if control_points.ndim != 3 or control_points.shape[0] != len(knots) - 1:
            raise DomainError(f"{control_points.shape} control points do not match {len(knots)} knots")
        segments = [
            BernsteinSegment(control_points[m], knots[m], knots[m + 1])
            for m in range(control_points.shape[0])
        ]
        return cls(agent_id, segments)

    @property
    def degree(self) -> int:
        return self.segments[0].degree

    @property
    def knots(self) -> np.ndarray:
        return np.array([self.segments[0].t_start] + [seg.t_end for seg in self.segments])

    @property
    def duration(self) -> float:
        return self.segments[-1].t_end - self.segments[0].t_start

    @property
    def control_points(self) -> np.ndarray:
        return np.stack([seg.control_points for seg in self.segments])

    def segment_index(self, t) -> np.ndarray:
        knots = self.knots
        index = np.searchsorted(knots, t, side="right") - 1
        return np.clip(index, 0, len(self.segments) - 1)

    def sample(self, ts, order: int = 0) -> np.ndarray:
        """
        Evaluates the order-th derivative at times ts. Times beyond the
        trajectory hold the final state (zero derivatives past the end).

        Returns:
            np.ndarray: (len(ts), 3) values.
        """
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        knots = self.knots
        clipped = np.clip(ts, knots[0], knots[-1])
        index = self.segment_index(clipped)
        values = np.empty((ts.shape[0], 3))
        for m in np.unique(index):
            seg = nth_derivative(self.segments[m], order) if order else self.segments[m]
            mask = index == m
            values[mask] = evaluate(seg, clipped[mask])
        if order:
            outside = (ts < knots[0]) | (ts > knots[-1])
            values[outside] = 0.0
        return values

    def evaluate(self, t) -> np.ndarray:
        return self.sample([t])[0]

    def retimed(self, k: float) -> "PiecewiseBezier":
        """Returns the trajectory with every knot multiplied by k."""
        return PiecewiseBezier.from_control_points(self.agent_id, self.control_points, self.knots * k)
