"""CART regression/classification trees with surrogate splits.

Predictor matrices are float arrays with NaN for missing cells. Categorical
columns carry integer codes. Trees grow best-first: the pending node whose
best split yields the largest impurity decrease is expanded next, until
``max_splits`` internal nodes exist or no node can be split.
"""

import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

MIN_NODE_SIZE = 5
"""Minimum number of rows a node needs before a split is attempted."""

MAX_ENUMERATED_LEVELS = 10
"""Categorical predictors with more levels at a node are split as ordinals."""

_TOL = 1e-12

LeafValue = Union[float, np.ndarray]


class ForestError(ValueError):
    """Raised when a tree or forest cannot be fitted."""


class Task(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class SplitKind(str, Enum):
    NUMERIC_THRESHOLD = "numeric_threshold"
    CATEGORICAL_SUBSET = "categorical_subset"


class Direction(str, Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class SplitRule:
    """Routes ``value < threshold`` (numeric) or ``value in left_categories`` left.

    ``right_categories`` lists the other levels seen while fitting; a level in
    neither set is treated like a missing value.
    """
    predictor_index: int
    kind: SplitKind
    threshold: float = float("nan")
    left_categories: FrozenSet[int] = frozenset()
    right_categories: FrozenSet[int] = frozenset()

    def applicable(self, values: np.ndarray) -> np.ndarray:
        if self.kind is SplitKind.NUMERIC_THRESHOLD:
            return ~np.isnan(values)
        known = np.fromiter(self.left_categories | self.right_categories, dtype=float)
        return np.isin(values, known)

    def goes_left(self, values: np.ndarray) -> np.ndarray:
        if self.kind is SplitKind.NUMERIC_THRESHOLD:
            return values < self.threshold
        left = np.fromiter(self.left_categories, dtype=float)
        return np.isin(values, left)


@dataclass(frozen=True)
class Surrogate:
    rule: SplitRule
    agreement: float
    flipped: bool
    association: float
    """(agreement - baseline) / (1 - baseline); 1 for a perfect surrogate."""


@dataclass(frozen=True, eq=False)
class TreeNode:
    """A fitted tree node; leaves have no ``primary_split``.

    ``leaf_value`` is the mean target (regression) or the class-count vector
    (classification) of the training rows reaching the node.
    """
    leaf_value: LeafValue
    n_samples: int
    primary_split: Optional[SplitRule] = None
    surrogates: Tuple[Surrogate, ...] = ()
    default_direction: Direction = Direction.LEFT
    node_gain: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.primary_split is None

    def iter_nodes(self) -> Iterator["TreeNode"]:
        """Nodes in pre-order."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    @property
    def n_splits(self) -> int:
        return sum(1 for n in self.iter_nodes() if not n.is_leaf)


@dataclass(frozen=True)
class TreeParams:
    task: Task = Task.REGRESSION
    max_splits: int = 255
    max_features: Optional[int] = None
    """Predictors drawn per node; None uses all of them."""
    min_node_size: int = MIN_NODE_SIZE
    n_classes: int = 0
    min_surrogate_association: float = 0.0


# --- impurity ------------------------------------------------------------------------


def _prepare_stats(y: np.ndarray, params: TreeParams) -> np.ndarray:
    if params.task is Task.REGRESSION:
        return np.asarray(y, dtype=float)
    codes = np.asarray(y, dtype=int)
    if params.n_classes < 1 or codes.min() < 0 or codes.max() >= params.n_classes:
        raise ForestError("class codes must lie in [0, n_classes)")
    return np.eye(params.n_classes)[codes]


def _impurity(stats: np.ndarray) -> float:
    """Summed squared error (regression) or n times Gini (classification)."""
    n = stats.shape[0]
    if n == 0:
        return 0.0
    if stats.ndim == 1:
        centered = stats - stats.mean()
        return float(np.dot(centered, centered))
    counts = stats.sum(axis=0)
    return float(n - np.dot(counts, counts) / n)


def _leaf_value(stats: np.ndarray) -> LeafValue:
    if stats.ndim == 1:
        return float(stats.mean())
    return stats.sum(axis=0)


def _child_impurity(n_l, n_r, left, total, regression: bool):
    """Vectorised impurity of candidate partitions from left-side sums."""
    if regression:
        s1_l, s2_l = left
        s1_t, s2_t = total
        sse_l = s2_l - s1_l ** 2 / n_l
        sse_r = (s2_t - s2_l) - (s1_t - s1_l) ** 2 / n_r
        return sse_l + sse_r
    counts_l = left
    counts_r = total - counts_l
    return (n_l - (counts_l ** 2).sum(axis=1) / n_l) + (n_r - (counts_r ** 2).sum(axis=1) / n_r)


def _numeric_split(x: np.ndarray, stats: np.ndarray) -> Optional[Tuple[float, float]]:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    s = stats[order]
    m = xs.size
    boundary = xs[:-1] < xs[1:]
    if not boundary.any():
        return None
    n_l = np.arange(1, m, dtype=float)
    n_r = m - n_l
    if s.ndim == 1:
        sc = s - s.mean()
        c1 = np.cumsum(sc)
        c2 = np.cumsum(sc * sc)
        child = _child_impurity(n_l, n_r, (c1[:-1], c2[:-1]), (c1[-1], c2[-1]), True)
    else:
        c = np.cumsum(s, axis=0)
        child = _child_impurity(n_l, n_r, c[:-1], c[-1], False)
    child = np.where(boundary, child, np.inf)
    i = int(np.argmin(child))
    threshold = 0.5 * (xs[i] + xs[i + 1])
    if not xs[i] < threshold:
        threshold = xs[i + 1]
    return float(child[i]), float(threshold)


def _categorical_split(codes: np.ndarray, stats: np.ndarray
                       ) -> Optional[Tuple[float, FrozenSet[int], FrozenSet[int]]]:
    levels, inverse = np.unique(codes.astype(int), return_inverse=True)
    n_levels = levels.size
    if n_levels < 2:
        return None
    counts = np.bincount(inverse, minlength=n_levels).astype(float)
    regression = stats.ndim == 1
    if regression:
        sc = stats - stats.mean()
        per_level = (np.bincount(inverse, weights=sc, minlength=n_levels),
                     np.bincount(inverse, weights=sc * sc, minlength=n_levels))
    else:
        per_level = np.zeros((n_levels, stats.shape[1]))
        np.add.at(per_level, inverse, stats)

    if n_levels <= MAX_ENUMERATED_LEVELS:
        subsets = np.arange(1, 2 ** (n_levels - 1))
        membership = ((subsets[:, None] >> np.arange(n_levels)) & 1).astype(float)
    else:
        if regression:
            key = per_level[0] / counts
        else:
            majority = int(np.argmax(per_level.sum(axis=0)))
            key = per_level[:, majority] / counts
        order = np.argsort(key, kind="mergesort")
        membership = np.zeros((n_levels - 1, n_levels))
        for j in range(1, n_levels):
            membership[j - 1, order[:j]] = 1.0

    n_l = membership @ counts
    n_r = counts.sum() - n_l
    if regression:
        left = (membership @ per_level[0], membership @ per_level[1])
        total = (per_level[0].sum(), per_level[1].sum())
        child = _child_impurity(n_l, n_r, left, total, True)
    else:
        child = _child_impurity(n_l, n_r, membership @ per_level, per_level.sum(axis=0), False)
    i = int(np.argmin(child))
    in_left = membership[i].astype(bool)
    return (float(child[i]), frozenset(int(v) for v in levels[in_left]),
            frozenset(int(v) for v in levels[~in_left]))


def best_split(X: np.ndarray, stats: np.ndarray, features: Sequence[int],
               categorical: np.ndarray) -> Optional[Tuple[SplitRule, float]]:
    """Best primary split over ``features`` and its impurity decrease.

    The decrease is measured on the rows where the predictor is present.
    """
    best: Optional[Tuple[SplitRule, float]] = None
    for j in features:
        x = X[:, j]
        present = ~np.isnan(x)
        if present.sum() < 2:
            continue
        s = stats[present]
        parent = _impurity(s)
        if parent <= _TOL:
            continue
        if categorical[j]:
            found = _categorical_split(x[present], s)
            if found is None:
                continue
            child, left, right = found
            rule = SplitRule(int(j), SplitKind.CATEGORICAL_SUBSET,
                             left_categories=left, right_categories=right)
        else:
            found = _numeric_split(x[present], s)
            if found is None:
                continue
            child, threshold = found
            rule = SplitRule(int(j), SplitKind.NUMERIC_THRESHOLD, threshold=threshold)
        gain = parent - child
        if gain > _TOL and (best is None or gain > best[1] + _TOL):
            best = (rule, gain)
    return best


# --- surrogates ----------------------------------------------------------------------


def _numeric_surrogate(x: np.ndarray, d: np.ndarray, j: int
                       ) -> Optional[Tuple[SplitRule, float, bool]]:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ds = d[order].astype(float)
    m = xs.size
    boundary = xs[:-1] < xs[1:]
    if not boundary.any():
        return None
    n_l = np.arange(1, m, dtype=float)
    left_left = np.cumsum(ds)[:-1]
    right_right = (m - n_l) - (ds.sum() - left_left)
    agree = (left_left + right_right) / m
    straight = np.where(boundary, agree, -np.inf)
    flipped = np.where(boundary, 1.0 - agree, -np.inf)
    i_s = int(np.argmax(straight))
    i_f = int(np.argmax(flipped))
    is_flipped = flipped[i_f] > straight[i_s]
    i = i_f if is_flipped else i_s
    threshold = 0.5 * (xs[i] + xs[i + 1])
    if not xs[i] < threshold:
        threshold = xs[i + 1]
    agreement = flipped[i] if is_flipped else straight[i]
    return SplitRule(j, SplitKind.NUMERIC_THRESHOLD, threshold=float(threshold)), \
        float(agreement), bool(is_flipped)


def _categorical_surrogate(x: np.ndarray, d: np.ndarray, j: int
                           ) -> Optional[Tuple[SplitRule, float, bool]]:
    levels, inverse = np.unique(x.astype(int), return_inverse=True)
    n_left = np.bincount(inverse, weights=d.astype(float), minlength=levels.size)
    n_right = np.bincount(inverse, minlength=levels.size) - n_left
    majority_left = d.mean() >= 0.5
    to_left = (n_left > n_right) | ((n_left == n_right) & majority_left)
    if to_left.all() or not to_left.any():
        return None
    agreement = float(np.maximum(n_left, n_right).sum() / x.size)
    rule = SplitRule(j, SplitKind.CATEGORICAL_SUBSET,
                     left_categories=frozenset(int(v) for v in levels[to_left]),
                     right_categories=frozenset(int(v) for v in levels[~to_left]))
    return rule, agreement, False


def find_surrogates(X: np.ndarray, primary: SplitRule, candidates: Sequence[int],
                    categorical: np.ndarray, min_association: float = 0.0
                    ) -> List[Surrogate]:
    """Surrogate splits mimicking ``primary`` on the node rows ``X``.

    A surrogate is kept when its agreement with the primary assignment strictly
    exceeds the majority-direction baseline (and its association exceeds
    ``min_association``). The result is sorted by decreasing agreement.
    """
    xp = X[:, primary.predictor_index]
    present = primary.applicable(xp)
    if present.sum() < 2:
        return []
    d = primary.goes_left(xp[present])
    Xp = X[present]

    found: List[Surrogate] = []
    for j in candidates:
        if j == primary.predictor_index:
            continue
        xc = Xp[:, j]
        both = ~np.isnan(xc)
        if not both.any():
            continue
        dl = d[both]
        p_left = float(dl.mean())
        baseline = max(p_left, 1.0 - p_left)
        if categorical[j]:
            candidate = _categorical_surrogate(xc[both], dl, int(j))
        else:
            candidate = _numeric_surrogate(xc[both], dl, int(j))
        if candidate is None:
            continue
        rule, agreement, flipped = candidate
        if agreement <= baseline + _TOL:
            continue
        association = (agreement - baseline) / (1.0 - baseline)
        if association <= min_association:
            continue
        found.append(Surrogate(rule, agreement, flipped, association))
    found.sort(key=lambda s: (-s.agreement, s.rule.predictor_index))
    return found


# --- routing -------------------------------------------------------------------------


def _route(primary: SplitRule, surrogates: Sequence[Surrogate], X: np.ndarray,
           default_left: Optional[bool]) -> Tuple[np.ndarray, np.ndarray]:
    """Left/right assignment plus the mask of rows decided without the default."""
    n = X.shape[0]
    go_left = np.zeros(n, dtype=bool)
    values = X[:, primary.predictor_index]
    decided = primary.applicable(values)
    go_left[decided] = primary.goes_left(values[decided])
    for surrogate in surrogates:
        if decided.all():
            break
        values = X[:, surrogate.rule.predictor_index]
        usable = ~decided & surrogate.rule.applicable(values)
        if not usable.any():
            continue
        left = surrogate.rule.goes_left(values[usable])
        go_left[usable] = ~left if surrogate.flipped else left
        decided |= usable
    if default_left is not None:
        go_left[~decided] = default_left
    return go_left, decided


def route_left(node: TreeNode, X: np.ndarray) -> np.ndarray:
    """Primary, then surrogates, then the default direction."""
    go_left, _ = _route(node.primary_split, node.surrogates, X,
                        node.default_direction is Direction.LEFT)
    return go_left


def predict_tree_batch(tree: TreeNode, X: np.ndarray) -> np.ndarray:
    """Leaf payload for every row of ``X``: shape (n,) or (n, n_classes)."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if isinstance(tree.leaf_value, np.ndarray):
        out = np.empty((n, tree.leaf_value.size))
    else:
        out = np.empty(n)
    stack = [(tree, np.arange(n))]
    while stack:
        node, rows = stack.pop()
        if rows.size == 0:
            continue
        if node.is_leaf:
            out[rows] = node.leaf_value
            continue
        go_left = route_left(node, X[rows])
        stack.append((node.right, rows[~go_left]))
        stack.append((node.left, rows[go_left]))
    return out


def predict_tree(tree: TreeNode, row: np.ndarray) -> LeafValue:
    """Leaf payload reached by a single row."""
    value = predict_tree_batch(tree, np.asarray(row, dtype=float)[None, :])[0]
    return value if isinstance(tree.leaf_value, np.ndarray) else float(value)


# --- fitting -------------------------------------------------------------------------


@dataclass
class _Building:
    rows: np.ndarray
    split: Optional[Tuple[SplitRule, float]] = None
    surrogates: Tuple[Surrogate, ...] = ()
    default_left: bool = True
    gain: float = 0.0
    children: Optional[Tuple[int, int]] = None
    order: int = field(default=0)


def _feature_subset(n_features: int, max_features: Optional[int],
                    rng: np.random.Generator) -> np.ndarray:
    if max_features is None or max_features >= n_features:
        return np.arange(n_features)
    return np.sort(rng.choice(n_features, size=max_features, replace=False))


def fit_tree(X: np.ndarray, y: np.ndarray, params: TreeParams, rng: np.random.Generator,
             categorical: Optional[Sequence[bool]] = None) -> TreeNode:
    """Grow one tree.

    Args:
        X: (n, p) predictors with NaN for missing cells.
        y: Targets; class codes in [0, n_classes) for classification. Rows with
            a NaN regression target are ignored.
        params: Tree parameters.
        rng: Random source for the per-node feature subsets.
        categorical: Per-column flag marking categorical predictors.

    Returns:
        The root node.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ForestError("need at least one row")
    n_features = X.shape[1]
    if n_features == 0 or (params.max_features is not None and params.max_features < 1):
        raise ForestError("empty feature subset")
    if params.max_splits < 0:
        raise ForestError("max_splits must be non-negative")
    cat = np.zeros(n_features, dtype=bool) if categorical is None else np.asarray(categorical, bool)

    y = np.asarray(y)
    if params.task is Task.REGRESSION:
        keep = np.isfinite(y.astype(float))
        if not keep.any():
            raise ForestError("all targets missing")
        X, y = X[keep], y[keep].astype(float)
    stats = _prepare_stats(y, params)
    n_total = X.shape[0]

    nodes: List[_Building] = []
    heap: List[Tuple[float, int]] = []

    def add_node(rows: np.ndarray) -> int:
        node = _Building(rows=rows, order=len(nodes))
        nodes.append(node)
        if rows.size >= max(params.min_node_size, 2) and _impurity(stats[rows]) > _TOL \
                and params.max_splits > 0:
            features = _feature_subset(n_features, params.max_features, rng)
            node.split = best_split(X[rows], stats[rows], features, cat)
            if node.split is not None:
                heapq.heappush(heap, (-node.split[1], node.order))
        return node.order

    add_node(np.arange(n_total))
    n_splits = 0
    while heap and n_splits < params.max_splits:
        _, index = heapq.heappop(heap)
        node = nodes[index]
        rule = node.split[0]
        X_node = X[node.rows]
        candidates = [j for j in range(n_features) if j != rule.predictor_index]
        surrogates = tuple(find_surrogates(X_node, rule, candidates, cat,
                                           params.min_surrogate_association))
        go_left, decided = _route(rule, surrogates, X_node, None)
        node.default_left = bool(2 * go_left[decided].sum() >= decided.sum())
        go_left[~decided] = node.default_left
        left_rows, right_rows = node.rows[go_left], node.rows[~go_left]
        parent = _impurity(stats[node.rows])
        node.gain = max(0.0, (parent - _impurity(stats[left_rows])
                              - _impurity(stats[right_rows])) / n_total)
        node.surrogates = surrogates
        node.children = (add_node(left_rows), add_node(right_rows))
        n_splits += 1

    built: List[Optional[TreeNode]] = [None] * len(nodes)
    for node in reversed(nodes):
        value = _leaf_value(stats[node.rows])
        if node.children is None:
            built[node.order] = TreeNode(leaf_value=value, n_samples=int(node.rows.size))
        else:
            left, right = node.children
            built[node.order] = TreeNode(
                leaf_value=value,
                n_samples=int(node.rows.size),
                primary_split=node.split[0],
                surrogates=node.surrogates,
                default_direction=Direction.LEFT if node.default_left else Direction.RIGHT,
                node_gain=node.gain,
                left=built[left],
                right=built[right],
            )
    return built[0]
