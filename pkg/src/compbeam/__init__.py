"""Globally optimal sum-rate beamforming with BS-user link selection under
per-BS backhaul, power and per-user SINR constraints."""

__version__ = "0.1.0"

from .cones import ConeProgram, ConeSolution, solve
from .dbrb import SolveResult, root_heuristic, solve_dbrb
from .oracle import enumerate_optimal, oracle_vs_dbrb
from .problem import (Box, Incumbent, InfeasibleInstanceError, Instance,
                      check_feasible, compute_root_box)
from .scenario import ChannelSet, SystemParams, generate_scenario

__all__ = [
    "Box", "ChannelSet", "ConeProgram", "ConeSolution", "Incumbent",
    "InfeasibleInstanceError", "Instance", "SolveResult", "SystemParams",
    "check_feasible", "compute_root_box", "enumerate_optimal",
    "generate_scenario", "oracle_vs_dbrb", "root_heuristic", "solve",
    "solve_dbrb",
]
