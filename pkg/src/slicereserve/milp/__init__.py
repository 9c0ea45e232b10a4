"""Reservation MILPs, solver backends and an independent constraint checker."""
from .assignment import (CostBreakdown, ReservationAssignment, SliceAssignment, ZERO_COST, committed_usage,
                         cost_breakdown, slice_cost, validate_assignment)
from .build import (BackgroundOverload, Committed, CorruptedState, MissingTargets, build_problem2, build_problem3,
                    build_reservation, expected_counts, extract_assignment, residual_capacity)
from .model import MilpModel, lp_name
from .solvers import (INFEASIBLE, OPTIMAL, TIMEOUT, SolveResult, SolverUnavailable, TinyInstance, TinySlice,
                      brute_force_solve, solve)

__all__ = [
    "BackgroundOverload", "Committed", "CorruptedState", "CostBreakdown", "INFEASIBLE", "MilpModel", "MissingTargets",
    "OPTIMAL", "ReservationAssignment", "SliceAssignment", "SolveResult", "SolverUnavailable", "TIMEOUT",
    "TinyInstance", "TinySlice", "ZERO_COST", "brute_force_solve", "build_problem2", "build_problem3",
    "build_reservation", "committed_usage", "cost_breakdown", "expected_counts", "extract_assignment", "lp_name",
    "residual_capacity", "slice_cost", "solve", "validate_assignment",
]
