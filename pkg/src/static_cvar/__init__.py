"""Tabular static-CVaR planning and learning on a budget-augmented MDP."""

from .augmentation import BudgetGrid, RoundingMode, next_budget, project, round_to_grid, transformed_reward
from .bellman import BellmanOperator, QTable, greedy_values, load_qtable, save_qtable, sweep_bauerle, sweep_T_e
from .evaluation import alpha_sweep, empirical_cvar, exact_policy_cvar
from .mdp import CraterWalkConfig, TabularMdp, build_crater_walk, risk_neutral_value_iteration, validate
from .policy import BudgetTracker, execute, greedy_policy, outer_optimize
from .qlearning import ExplorationSchedule, StepSizeSchedule, learn
from .value_iteration import NonConvergenceError, SolveReport, solve

__all__ = [
    "BellmanOperator",
    "BudgetGrid",
    "BudgetTracker",
    "CraterWalkConfig",
    "ExplorationSchedule",
    "NonConvergenceError",
    "QTable",
    "RoundingMode",
    "SolveReport",
    "StepSizeSchedule",
    "TabularMdp",
    "alpha_sweep",
    "build_crater_walk",
    "empirical_cvar",
    "exact_policy_cvar",
    "execute",
    "greedy_policy",
    "greedy_values",
    "learn",
    "load_qtable",
    "next_budget",
    "outer_optimize",
    "project",
    "risk_neutral_value_iteration",
    "round_to_grid",
    "save_qtable",
    "solve",
    "sweep_T_e",
    "sweep_bauerle",
    "transformed_reward",
    "validate",
]
