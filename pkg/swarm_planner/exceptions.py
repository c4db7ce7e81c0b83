from typing import Optional


class PlannerError(Exception):
    """Base class for every error raised by the planner.

    Args:
        message (str): Human readable description.
        stage (Optional[str]): Pipeline stage the error belongs to, if known.
    """

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        message = super().__str__()
        return f"[{self.stage}] {message}" if self.stage else message


class DomainError(PlannerError, ValueError):
    """Evaluation time outside a segment interval."""


class DegreeError(PlannerError, ValueError):
    """Polynomial degree too low for the requested operation."""


class ConfigurationError(PlannerError, ValueError):
    """Invalid planner configuration."""


class MapFormatError(PlannerError, ValueError):
    """Malformed world file or world definition."""


class UnreachableError(PlannerError, ValueError):
    """A start or goal cannot be connected to the free lattice."""


class MissionError(PlannerError, ValueError):
    """Mission violates a validity invariant."""


class ScenarioError(PlannerError, ValueError):
    """Scenario generation could not satisfy its constraints."""


class MapfError(PlannerError):
    """Initial multi-agent path finding failed."""


class MapfTimeoutError(MapfError):
    """ECBS did not find a solution within its time budget."""


class CorridorError(PlannerError):
    """Corridor construction found a corrupt discrete plan."""


class QpSolveError(PlannerError):
    """The batch QP could not be solved to the required accuracy."""


class ValidationFailure(PlannerError):
    """A produced trajectory set failed independent validation."""


class PlanningFailed(PlannerError):
    """End-to-end planning failed; `stage` names the responsible stage."""
