"""Post-hoc analysis of run histories."""
from .correlation import CorrelationTable, average_ranks, budget_correlation_table, spearman
from .fanova import (ImportanceReport, MarginalCurve, TreeDecomposition, fanova_importance,
                     marginal_curve)
from .forest import Forest, ForestParams, InsufficientData, fit_forest, fit_surrogate, fit_tree

__all__ = [
    "CorrelationTable", "average_ranks", "budget_correlation_table", "spearman",
    "ImportanceReport", "MarginalCurve", "TreeDecomposition", "fanova_importance",
    "marginal_curve", "Forest", "ForestParams", "InsufficientData", "fit_forest",
    "fit_surrogate", "fit_tree",
]
