"""Continuous QP engine, branch-and-bound, heuristic and brute-force oracle."""

from .bnb import MiqpSolution, MiqpStatus, SolverParams, solve, solve_exact, solve_heuristic
from .oracle import brute_force_oracle
from .qp import ContinuousSolution, KktResiduals, QpSettings, QpStatus, kkt_residuals, problem_residuals, solve_qp
from .schedule import Schedule, extract_schedule, load_schedule, save_schedule

__all__ = [
    "ContinuousSolution", "KktResiduals", "MiqpSolution", "MiqpStatus", "QpSettings", "QpStatus",
    "Schedule", "SolverParams", "brute_force_oracle", "extract_schedule", "kkt_residuals",
    "load_schedule", "problem_residuals", "save_schedule", "solve", "solve_exact", "solve_heuristic", "solve_qp",
]
