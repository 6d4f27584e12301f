"""Multi-fidelity joint neural-architecture and hyperparameter search."""
__version__ = "0.1.0"

from .engine import StoppingCondition, random_search, run
from .history import (Observation, RunHistory, full_budget_equivalents, incumbent_at,
                      incumbent_trajectory, read_history)
from .sampler import KdeModel, SamplerParams, fit_models, propose, select_model_budget
from .scheduler import BudgetLadder, SchedulerState, bracket_layout, geometric_budgets, promote
from .space import ParameterSpec, SearchSpace, cell_space, joint_space, parse_space

__all__ = [
    "StoppingCondition", "random_search", "run", "Observation", "RunHistory",
    "full_budget_equivalents", "incumbent_at", "incumbent_trajectory", "read_history",
    "KdeModel", "SamplerParams", "fit_models", "propose", "select_model_budget",
    "BudgetLadder", "SchedulerState", "bracket_layout", "geometric_budgets", "promote",
    "ParameterSpec", "SearchSpace", "cell_space", "joint_space", "parse_space",
]
