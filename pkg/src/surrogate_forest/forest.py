"""Bagged and boosted ensembles of surrogate-split trees."""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from logging_utils import get_logger
from surrogate_forest.schema import ColumnSchema
from surrogate_forest.tree import (
    Direction,
    ForestError,
    SplitKind,
    SplitRule,
    Surrogate,
    Task,
    TreeNode,
    TreeParams,
    fit_tree,
    predict_tree_batch,
)

logger = get_logger("traitscale.forest")

FORMAT_VERSION = 1


class EnsembleMode(str, Enum):
    BAGGED = "bagged"
    BOOSTED = "boosted"


class SurrogateWeighting(str, Enum):
    AGREEMENT = "agreement"
    ASSOCIATION = "association"
    NONE = "none"


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_splits: int = 255
    learning_rate: float = 0.1
    """Shrinkage of each boosted tree; ignored by bagged ensembles."""
    mode: EnsembleMode = EnsembleMode.BAGGED
    task: Task = Task.REGRESSION
    max_features: Optional[int] = None
    """Predictors drawn per node; None picks ceil(p/3) for bagged regression,
    ceil(sqrt(p)) for classification and all predictors for boosting."""
    min_node_size: int = 5
    bootstrap: bool = True
    surrogate_weighting: SurrogateWeighting = SurrogateWeighting.AGREEMENT
    min_surrogate_association: float = 0.0
    n_jobs: int = 1

    def resolved_max_features(self, n_features: int) -> int:
        if self.max_features is not None:
            return self.max_features
        if self.task is Task.CLASSIFICATION:
            return max(1, math.ceil(math.sqrt(n_features)))
        if self.mode is EnsembleMode.BOOSTED:
            return n_features
        return max(1, math.ceil(n_features / 3))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key in ("mode", "task", "surrogate_weighting"):
            data[key] = data[key].value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ForestParams":
        data = dict(data)
        data["mode"] = EnsembleMode(data["mode"])
        data["task"] = Task(data["task"])
        data["surrogate_weighting"] = SurrogateWeighting(data["surrogate_weighting"])
        return cls(**data)


@dataclass(frozen=True, eq=False)
class ForestModel:
    """A fitted ensemble.

    For classification ``classes`` maps tree class indices to the original
    labels. Boosted regression predicts ``init_value`` plus the shrunken sum
    of tree outputs.
    """
    trees: Tuple[TreeNode, ...]
    params: ForestParams
    column_schema: ColumnSchema
    classes: Tuple[Any, ...] = ()
    init_value: float = 0.0
    training_mse_decrease: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def task(self) -> Task:
        return self.params.task

    @property
    def mode(self) -> EnsembleMode:
        return self.params.mode


def _tree_seeds(seed: Union[int, np.random.SeedSequence], n: int) -> List[np.random.SeedSequence]:
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return root.spawn(n)


def fit_forest(X: np.ndarray, y: Sequence, params: ForestParams, schema: ColumnSchema,
               seed: Union[int, np.random.SeedSequence] = 0) -> ForestModel:
    """Fit a bagged or boosted ensemble.

    Each tree draws its randomness from its own stream spawned from ``seed``,
    so serial and threaded fitting give identical models.
    """
    X = np.asarray(X, dtype=float)
    if params.n_trees < 1:
        raise ForestError("n_trees must be at least 1")
    if X.ndim != 2 or X.shape[1] != len(schema):
        raise ForestError(f"predictor matrix has {X.shape[-1]} columns, schema {len(schema)}")
    categorical = schema.categorical_mask

    classes: Tuple[Any, ...] = ()
    if params.task is Task.CLASSIFICATION:
        if params.mode is EnsembleMode.BOOSTED:
            raise ForestError("boosting is only implemented for regression")
        labels = np.asarray(y)
        classes = tuple(np.unique(labels).tolist())
        targets = np.searchsorted(np.asarray(classes), labels)
        tree_params = TreeParams(Task.CLASSIFICATION, params.max_splits,
                                 params.resolved_max_features(X.shape[1]),
                                 params.min_node_size, len(classes),
                                 params.min_surrogate_association)
    else:
        targets = np.asarray(y, dtype=float)
        keep = np.isfinite(targets)
        if not keep.any():
            raise ForestError("all targets missing")
        X, targets = X[keep], targets[keep]
        tree_params = TreeParams(Task.REGRESSION, params.max_splits,
                                 params.resolved_max_features(X.shape[1]),
                                 params.min_node_size, 0, params.min_surrogate_association)

    seeds = _tree_seeds(seed, params.n_trees)
    n = X.shape[0]
    logger.debug(f"Fitting {params.mode.value} {params.task.value} forest: "
                 f"{params.n_trees} trees, {n} rows, {X.shape[1]} predictors")

    init_value = 0.0
    if params.mode is EnsembleMode.BAGGED:
        def grow(t: int) -> TreeNode:
            rng = np.random.default_rng(seeds[t])
            rows = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
            return fit_tree(X[rows], targets[rows], tree_params, rng, categorical)

        if params.n_jobs > 1:
            with ThreadPoolExecutor(max_workers=params.n_jobs) as pool:
                trees = tuple(pool.map(grow, range(params.n_trees)))
        else:
            trees = tuple(grow(t) for t in range(params.n_trees))
    else:
        init_value = float(targets.mean())
        running = np.full(n, init_value)
        grown = []
        for t in range(params.n_trees):
            rng = np.random.default_rng(seeds[t])
            tree = fit_tree(X, targets - running, tree_params, rng, categorical)
            running = running + params.learning_rate * predict_tree_batch(tree, X)
            grown.append(tree)
        trees = tuple(grown)

    model = ForestModel(trees, params, schema, classes, init_value)
    return replace(model, training_mse_decrease=variable_importance(model))


def per_tree_predictions(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """(n_trees, n) regression outputs or winning class indices per tree."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.column_schema):
        raise ForestError("rows do not match the model's column schema")
    outputs = []
    for tree in model.trees:
        payload = predict_tree_batch(tree, X)
        outputs.append(np.argmax(payload, axis=1) if model.task is Task.CLASSIFICATION
                       else payload)
    return np.vstack(outputs)


def predict_forest_batch(model: ForestModel, X: np.ndarray
                         ) -> Tuple[np.ndarray, np.ndarray]:
    """Estimates and dispersions for every row.

    Regression: bagged mean of tree outputs with their population std, or the
    boosted sum with the learning-rate-scaled std of tree outputs.
    Classification: majority vote (ties to the lowest class) with
    ``1 - winning vote fraction``.
    """
    per_tree = per_tree_predictions(model, X)
    if model.task is Task.CLASSIFICATION:
        n_classes = len(model.classes)
        votes = np.zeros((n_classes, per_tree.shape[1]))
        for k in range(n_classes):
            votes[k] = (per_tree == k).sum(axis=0)
        winner = np.argmax(votes, axis=0)
        fraction = votes[winner, np.arange(per_tree.shape[1])] / model.n_trees
        labels = np.asarray(model.classes)[winner]
        return labels, 1.0 - fraction
    spread = per_tree.std(axis=0)
    # the mean of identical floats can be an ulp off them
    spread[per_tree.min(axis=0) == per_tree.max(axis=0)] = 0.0
    if model.mode is EnsembleMode.BOOSTED:
        lr = model.params.learning_rate
        return model.init_value + lr * per_tree.sum(axis=0), lr * spread
    return per_tree.mean(axis=0), spread


def predict_forest(model: ForestModel, row: np.ndarray) -> Tuple[Any, float]:
    """Estimate and dispersion for a single row."""
    estimates, dispersion = predict_forest_batch(model, np.asarray(row, dtype=float)[None, :])
    estimate = estimates[0]
    if model.task is Task.REGRESSION:
        estimate = float(estimate)
    elif isinstance(estimate, np.generic):
        estimate = estimate.item()
    return estimate, float(dispersion[0])


def variable_importance(model: ForestModel) -> np.ndarray:
    """Mean over trees of split gains per predictor divided by branch-node count.

    Every branch node credits its gain to the primary predictor and, weighted
    by agreement (or association), to each retained surrogate's predictor.
    """
    n_features = len(model.column_schema)
    weighting = model.params.surrogate_weighting
    total = np.zeros(n_features)
    for tree in model.trees:
        per_tree = np.zeros(n_features)
        n_branches = 0
        for node in tree.iter_nodes():
            if node.is_leaf:
                continue
            n_branches += 1
            per_tree[node.primary_split.predictor_index] += node.node_gain
            if weighting is SurrogateWeighting.NONE:
                continue
            for surrogate in node.surrogates:
                weight = (surrogate.agreement if weighting is SurrogateWeighting.AGREEMENT
                          else surrogate.association)
                per_tree[surrogate.rule.predictor_index] += weight * node.node_gain
        if n_branches:
            total += per_tree / n_branches
    return total / model.n_trees


def importance_ranking(model: ForestModel, top: Optional[int] = None
                       ) -> List[Tuple[str, float]]:
    """Predictor names with importance, most important first."""
    importance = variable_importance(model)
    order = sorted(range(importance.size), key=lambda i: (-importance[i], i))
    ranked = [(model.column_schema.names[i], float(importance[i])) for i in order]
    return ranked[:top] if top is not None else ranked


class ImportanceEntry(BaseModel):
    """One row of an importance ranking as carried in JSON reports."""
    predictor: str
    importance: float = Field(..., ge=0)


def importance_entries(model: ForestModel, top: Optional[int] = None) -> List[ImportanceEntry]:
    return [ImportanceEntry(predictor=name, importance=value)
            for name, value in importance_ranking(model, top)]


# --- serialization -------------------------------------------------------------------


def _rule_to_dict(rule: SplitRule) -> Dict[str, Any]:
    return {
        "predictor": rule.predictor_index,
        "kind": rule.kind.value,
        "threshold": None if rule.kind is SplitKind.CATEGORICAL_SUBSET else rule.threshold,
        "left": sorted(rule.left_categories),
        "right": sorted(rule.right_categories),
    }


def _rule_from_dict(data: Dict[str, Any]) -> SplitRule:
    kind = SplitKind(data["kind"])
    return SplitRule(
        predictor_index=int(data["predictor"]),
        kind=kind,
        threshold=float("nan") if data["threshold"] is None else float(data["threshold"]),
        left_categories=frozenset(int(v) for v in data["left"]),
        right_categories=frozenset(int(v) for v in data["right"]),
    )


def _flatten(tree: TreeNode) -> Dict[str, List[Any]]:
    nodes = list(tree.iter_nodes())
    index = {id(node): i for i, node in enumerate(nodes)}
    arrays: Dict[str, List[Any]] = {k: [] for k in (
        "split", "surrogates", "default_left", "value", "gain", "n_samples", "left", "right")}
    for node in nodes:
        leaf = node.is_leaf
        arrays["split"].append(None if leaf else _rule_to_dict(node.primary_split))
        arrays["surrogates"].append([
            {"rule": _rule_to_dict(s.rule), "agreement": s.agreement,
             "flipped": s.flipped, "association": s.association}
            for s in node.surrogates])
        arrays["default_left"].append(node.default_direction is Direction.LEFT)
        value = node.leaf_value
        arrays["value"].append(value.tolist() if isinstance(value, np.ndarray) else value)
        arrays["gain"].append(node.node_gain)
        arrays["n_samples"].append(node.n_samples)
        arrays["left"].append(-1 if leaf else index[id(node.left)])
        arrays["right"].append(-1 if leaf else index[id(node.right)])
    return arrays


def _unflatten(arrays: Dict[str, List[Any]]) -> TreeNode:
    n = len(arrays["value"])
    built: List[Optional[TreeNode]] = [None] * n
    for i in reversed(range(n)):
        value = arrays["value"][i]
        value = np.asarray(value, dtype=float) if isinstance(value, list) else float(value)
        split = arrays["split"][i]
        if split is None:
            built[i] = TreeNode(leaf_value=value, n_samples=int(arrays["n_samples"][i]))
            continue
        built[i] = TreeNode(
            leaf_value=value,
            n_samples=int(arrays["n_samples"][i]),
            primary_split=_rule_from_dict(split),
            surrogates=tuple(Surrogate(_rule_from_dict(s["rule"]), float(s["agreement"]),
                                       bool(s["flipped"]), float(s["association"]))
                             for s in arrays["surrogates"][i]),
            default_direction=Direction.LEFT if arrays["default_left"][i] else Direction.RIGHT,
            node_gain=float(arrays["gain"][i]),
            left=built[arrays["left"][i]],
            right=built[arrays["right"][i]],
        )
    return built[0]


def forest_to_dict(model: ForestModel) -> Dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "params": model.params.to_dict(),
        "column_schema": model.column_schema.to_list(),
        "classes": list(model.classes),
        "init_value": model.init_value,
        "trees": [_flatten(t) for t in model.trees],
    }


def forest_from_dict(data: Dict[str, Any]) -> ForestModel:
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ForestError(f"unsupported forest format version {version}")
    model = ForestModel(
        trees=tuple(_unflatten(t) for t in data["trees"]),
        params=ForestParams.from_dict(data["params"]),
        column_schema=ColumnSchema.from_list(data["column_schema"]),
        classes=tuple(data["classes"]),
        init_value=float(data["init_value"]),
    )
    return replace(model, training_mse_decrease=variable_importance(model))


def save_forest(model: ForestModel, path: Union[str, Path]) -> None:
    with open(path, "wt", encoding="utf-8") as f:
        json.dump(forest_to_dict(model), f)


def load_forest(path: Union[str, Path]) -> ForestModel:
    with open(path, "rt", encoding="utf-8") as f:
        return forest_from_dict(json.load(f))
