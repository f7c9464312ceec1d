"""Distributed generalized Nash equilibrium seeking via preconditioned proximal-point iterations."""

from .errors import GNEError
from .game import (
    CallableGame,
    GameProblem,
    QuadraticAggregativeGame,
    QuadraticGame,
    kkt_residual,
    pseudo_gradient,
)
from .graph import CommGraph, build_graph, complete_graph, path_graph, random_connected_graph
from .oracle import OracleSolution, solve_vgne_centralized
from .ppa import Schedule
from .stepsizes import StepPlan, make_aggregative_plan, make_gne_plan

__version__ = "0.1.0"

__all__ = [
    "CallableGame", "CommGraph", "GNEError", "GameProblem", "OracleSolution", "QuadraticAggregativeGame",
    "QuadraticGame", "Schedule", "StepPlan", "build_graph", "complete_graph", "kkt_residual",
    "make_aggregative_plan", "make_gne_plan", "path_graph", "pseudo_gradient", "random_connected_graph",
    "solve_vgne_centralized",
]
