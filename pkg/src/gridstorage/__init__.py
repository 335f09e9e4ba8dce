"""Flexible grid-connected energy storage model for multi-period optimal power flow."""

from .datamodel import (
    Branch, Bus, Finding, Generator, Network, StorageDevice, TerminalCondition, TimeGrid, ValidationError,
    per_phase_rating, validate_network,
)
from .formulation import build_problem
from .solution import Solution
from .solve import SolveOptions, SolveResult, solve_case

__version__ = "0.1.0"

__all__ = [
    "Branch", "Bus", "Finding", "Generator", "Network", "Solution", "SolveOptions", "SolveResult",
    "StorageDevice", "TerminalCondition", "TimeGrid", "ValidationError", "build_problem", "per_phase_rating",
    "solve_case", "validate_network",
]
