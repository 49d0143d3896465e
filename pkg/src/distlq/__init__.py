"""Fixed-endpoint LQ control, solved centrally or by agents over a graph."""

from .centralized import CentralizedSolution
from .centralized import solve as solve_centralized
from .distributed import DistributedSolution
from .distributed import solve as solve_distributed
from .errors import (
    ConvergenceError,
    DistLQError,
    IntegrationDivergenceError,
    LyapunovSolveError,
    NumericalDegeneracyError,
    ReachabilityError,
    ScenarioError,
    StabilizabilityError,
    StructuralError,
    TopologyError,
)
from .model import AgentView, IterationSchedule, LQTerminalProblem, Topology
from .numerics import MatrixTrajectory, TimeGrid, VectorTrajectory

__version__ = "0.1.0"

__all__ = [
    "AgentView",
    "CentralizedSolution",
    "ConvergenceError",
    "DistLQError",
    "DistributedSolution",
    "IntegrationDivergenceError",
    "IterationSchedule",
    "LQTerminalProblem",
    "LyapunovSolveError",
    "MatrixTrajectory",
    "NumericalDegeneracyError",
    "ReachabilityError",
    "ScenarioError",
    "StabilizabilityError",
    "StructuralError",
    "TimeGrid",
    "Topology",
    "TopologyError",
    "VectorTrajectory",
    "solve_centralized",
    "solve_distributed",
]
