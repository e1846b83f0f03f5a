"""
CART trees and tree ensembles over mixed categorical/continuous predictors.

Missing predictor values are routed through surrogate splits, so the same
models serve trait gap-filling, land-cover classification and trait
regression.
"""

from surrogate_forest.forest import (
    FORMAT_VERSION,
    EnsembleMode,
    ForestModel,
    ForestParams,
    ImportanceEntry,
    SurrogateWeighting,
    fit_forest,
    forest_from_dict,
    forest_to_dict,
    importance_entries,
    importance_ranking,
    load_forest,
    per_tree_predictions,
    predict_forest,
    predict_forest_batch,
    save_forest,
    variable_importance,
)
from surrogate_forest.schema import ColumnKind, ColumnSchema, ColumnSpec
from surrogate_forest.tree import (
    MIN_NODE_SIZE,
    Direction,
    ForestError,
    SplitKind,
    SplitRule,
    Surrogate,
    Task,
    TreeNode,
    TreeParams,
    best_split,
    find_surrogates,
    fit_tree,
    predict_tree,
    predict_tree_batch,
    route_left,
)

__all__ = [
    "FORMAT_VERSION", "MIN_NODE_SIZE", "ColumnKind", "ColumnSchema", "ColumnSpec",
    "Direction", "EnsembleMode", "ForestError", "ForestModel", "ForestParams", "ImportanceEntry",
    "SplitKind", "SplitRule", "Surrogate", "SurrogateWeighting", "Task", "TreeNode",
    "TreeParams", "best_split", "find_surrogates", "fit_forest", "fit_tree",
    "forest_from_dict", "forest_to_dict", "importance_entries", "importance_ranking", "load_forest",
    "per_tree_predictions", "predict_forest", "predict_forest_batch", "predict_tree",
    "predict_tree_batch", "route_left", "save_forest", "variable_importance",
]
