"""Tests for the surrogate_forest package.

Exercises split search against exhaustive enumeration, surrogate discovery,
routing of missing values, ensemble prediction, importance and serialization.
"""

import itertools
import math
import os
import unittest
from tempfile import TemporaryDirectory

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as nps

from surrogate_forest import (
    ColumnKind,
    ColumnSchema,
    ColumnSpec,
    Direction,
    EnsembleMode,
    ForestError,
    ForestModel,
    ForestParams,
    SplitKind,
    SplitRule,
    Surrogate,
    Task,
    TreeNode,
    TreeParams,
    find_surrogates,
    fit_forest,
    fit_tree,
    importance_ranking,
    load_forest,
    per_tree_predictions,
    predict_forest,
    predict_forest_batch,
    predict_tree,
    predict_tree_batch,
    save_forest,
    variable_importance,
)

NAN = float("nan")


def sse(y):
    y = np.asarray(y, dtype=float)
    return float(((y - y.mean()) ** 2).sum()) if y.size else 0.0


def gini_n(labels):
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    _, counts = np.unique(labels, return_counts=True)
    return float(labels.size - (counts ** 2).sum() / labels.size)


def brute_force_decrease(X, y, impurity, categorical=()):
    """Largest impurity decrease over every threshold and category subset."""
    parent = impurity(y)
    best = 0.0
    for j in range(X.shape[1]):
        x = X[:, j]
        values = np.unique(x)
        if j in categorical:
            for r in range(1, len(values)):
                for subset in itertools.combinations(values, r):
                    left = np.isin(x, subset)
                    best = max(best, parent - impurity(y[left]) - impurity(y[~left]))
        else:
            for t in values[1:]:
                left = x < t
                best = max(best, parent - impurity(y[left]) - impurity(y[~left]))
    return best


class TestFitTree(unittest.TestCase):
    """Tests for single-tree fitting."""

    def test_four_point_threshold(self):
        """x=[1,2,3,4], y=[0,0,1,1] splits between 2 and 3."""
        X = np.array([[1.0], [2.0], [3.0], [4.0]])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        tree = fit_tree(X, y, TreeParams(max_splits=1, min_node_size=2),
                        np.random.default_rng(0))
        self.assertFalse(tree.is_leaf)
        self.assertEqual(tree.primary_split.kind, SplitKind.NUMERIC_THRESHOLD)
        self.assertGreater(tree.primary_split.threshold, 2.0)
        self.assertLessEqual(tree.primary_split.threshold, 3.0)
        self.assertEqual(tree.left.leaf_value, 0.0)
        self.assertEqual(tree.right.leaf_value, 1.0)
        self.assertAlmostEqual(tree.node_gain, 0.25)

    def test_constant_targets_single_leaf(self):
        """A pure node is never split."""
        X = np.arange(20, dtype=float).reshape(10, 2)
        tree = fit_tree(X, np.full(10, 3.5), TreeParams(), np.random.default_rng(0))
        self.assertTrue(tree.is_leaf)
        self.assertEqual(tree.node_gain, 0.0)
        self.assertEqual(tree.leaf_value, 3.5)

    def test_zero_splits_gives_mean(self):
        """max_splits=0 leaves the root as the target mean."""
        X = np.arange(10, dtype=float).reshape(10, 1)
        y = np.arange(10, dtype=float) ** 2
        tree = fit_tree(X, y, TreeParams(max_splits=0), np.random.default_rng(0))
        self.assertTrue(tree.is_leaf)
        self.assertAlmostEqual(tree.leaf_value, y.mean())

    def test_respects_max_splits(self):
        """No tree has more internal nodes than max_splits."""
        rng = np.random.default_rng(1)
        X = rng.normal(size=(200, 3))
        y = X[:, 0] + rng.normal(size=200)
        for max_splits in (1, 3, 7, 20):
            tree = fit_tree(X, y, TreeParams(max_splits=max_splits), rng)
            self.assertLessEqual(tree.n_splits, max_splits)

    def test_all_targets_missing(self):
        """Fitting on NaN targets fails."""
        with self.assertRaises(ForestError):
            fit_tree(np.ones((3, 1)), np.full(3, NAN), TreeParams(), np.random.default_rng(0))

    def test_empty_feature_subset(self):
        """A matrix without predictors cannot be fitted."""
        with self.assertRaises(ForestError):
            fit_tree(np.ones((3, 0)), np.ones(3), TreeParams(), np.random.default_rng(0))

    def test_categorical_subset_split(self):
        """Levels {0, 2} versus {1} are separated by one categorical split."""
        codes = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2, 1], dtype=float)
        y = np.where(codes == 1, 10.0, 0.0)
        tree = fit_tree(codes[:, None], y, TreeParams(max_splits=1, min_node_size=2),
                        np.random.default_rng(0), categorical=[True])
        split = tree.primary_split
        self.assertEqual(split.kind, SplitKind.CATEGORICAL_SUBSET)
        self.assertIn(split.left_categories, (frozenset({1}), frozenset({0, 2})))
        self.assertEqual(split.left_categories | split.right_categories, frozenset({0, 1, 2}))

    def test_high_cardinality_ordinal_reduction(self):
        """A 12-level predictor is split by ordering levels on their mean target."""
        codes = np.repeat(np.arange(12), 5).astype(float)
        level_mean = np.array([5, 1, 9, 3, 11, 0, 7, 2, 10, 4, 8, 6], dtype=float)
        y = level_mean[codes.astype(int)]
        tree = fit_tree(codes[:, None], y, TreeParams(max_splits=1, min_node_size=2),
                        np.random.default_rng(0), categorical=[True])
        left_means = {level_mean[c] for c in tree.primary_split.left_categories}
        right_means = {level_mean[c] for c in tree.primary_split.right_categories}
        self.assertTrue(max(left_means) < min(right_means) or max(right_means) < min(left_means))

    def test_gains_non_negative_with_missing(self):
        """Every internal node has a non-negative gain, missing values included."""
        rng = np.random.default_rng(3)
        X = rng.normal(size=(300, 4))
        y = X[:, 0] * 2 + X[:, 1] + rng.normal(size=300)
        X[rng.random(X.shape) < 0.3] = NAN
        tree = fit_tree(X, y, TreeParams(max_splits=40), rng)
        for node in tree.iter_nodes():
            self.assertGreaterEqual(node.node_gain, 0.0)
            if not node.is_leaf:
                agreements = [s.agreement for s in node.surrogates]
                self.assertEqual(agreements, sorted(agreements, reverse=True))

    def test_default_direction_is_majority_child(self):
        """The default direction points to the child holding more training rows."""
        rng = np.random.default_rng(4)
        X = rng.normal(size=(200, 2))
        X[:, 1] = X[:, 0] + rng.normal(scale=0.5, size=200)
        y = (X[:, 0] > 0.7).astype(float)
        X[rng.random(200) < 0.4, 0] = NAN
        tree = fit_tree(X, y, TreeParams(max_splits=5), rng)
        for node in tree.iter_nodes():
            if node.is_leaf:
                continue
            left_bigger = node.left.n_samples >= node.right.n_samples
            self.assertEqual(node.default_direction is Direction.LEFT, left_bigger)

    @settings(max_examples=150, deadline=None)
    @given(data=st.data())
    def test_exhaustive_oracle_regression(self, data):
        """The root split attains the brute-force best variance decrease."""
        n = data.draw(st.integers(2, 8))
        p = data.draw(st.integers(1, 3))
        X = data.draw(nps.arrays(np.float64, (n, p), elements=st.integers(0, 4).map(float)))
        y = data.draw(nps.arrays(np.float64, (n,), elements=st.integers(-5, 5).map(float)))
        categorical = data.draw(st.sets(st.integers(0, p - 1), max_size=p))
        tree = fit_tree(X, y, TreeParams(max_splits=1, min_node_size=2),
                        np.random.default_rng(0),
                        categorical=[j in categorical for j in range(p)])
        expected = brute_force_decrease(X, y, sse, categorical)
        found = tree.node_gain * n if not tree.is_leaf else 0.0
        self.assertAlmostEqual(found, expected, places=9)

    @settings(max_examples=100, deadline=None)
    @given(data=st.data())
    def test_exhaustive_oracle_classification(self, data):
        """The root split attains the brute-force best Gini decrease."""
        n = data.draw(st.integers(2, 8))
        p = data.draw(st.integers(1, 3))
        X = data.draw(nps.arrays(np.float64, (n, p), elements=st.integers(0, 4).map(float)))
        y = data.draw(nps.arrays(np.int64, (n,), elements=st.integers(0, 2)))
        categorical = data.draw(st.sets(st.integers(0, p - 1), max_size=p))
        tree = fit_tree(X, y, TreeParams(Task.CLASSIFICATION, max_splits=1, min_node_size=2,
                                         n_classes=3),
                        np.random.default_rng(0),
                        categorical=[j in categorical for j in range(p)])
        expected = brute_force_decrease(X, y, gini_n, categorical)
        found = tree.node_gain * n if not tree.is_leaf else 0.0
        self.assertAlmostEqual(found, expected, places=9)


class TestFindSurrogates(unittest.TestCase):
    """Tests for surrogate discovery."""

    def setUp(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=200)
        self.X = np.column_stack([x, x.copy(), -x, rng.normal(size=200)])
        self.primary = SplitRule(0, SplitKind.NUMERIC_THRESHOLD, threshold=float(np.median(x)))
        self.numeric = np.zeros(4, dtype=bool)

    def test_duplicate_column_first(self):
        """A duplicate column agrees perfectly and comes first."""
        found = find_surrogates(self.X, self.primary, [1, 2, 3], self.numeric)
        self.assertGreaterEqual(len(found), 2)
        self.assertEqual(found[0].rule.predictor_index, 1)
        self.assertEqual(found[0].agreement, 1.0)
        self.assertFalse(found[0].flipped)

    def test_anti_correlated_column_flipped(self):
        """A negated column is retained with flipped direction."""
        found = find_surrogates(self.X, self.primary, [2], self.numeric)
        self.assertEqual(len(found), 1)
        self.assertTrue(found[0].flipped)
        self.assertEqual(found[0].agreement, 1.0)

    def test_independent_column_near_baseline(self):
        """A noise column agrees about as well as the majority rule."""
        found = find_surrogates(self.X, self.primary, [3], self.numeric)
        for surrogate in found:
            self.assertLess(surrogate.agreement, 0.5 + 0.2)
        strict = find_surrogates(self.X, self.primary, [3], self.numeric, min_association=0.5)
        self.assertEqual(strict, [])

    def test_categorical_surrogate(self):
        """A categorical copy of the split is a perfect surrogate."""
        codes = (self.X[:, 0] < self.primary.threshold).astype(float) * 2
        X = np.column_stack([self.X[:, 0], codes])
        found = find_surrogates(X, self.primary, [1], np.array([False, True]))
        self.assertEqual(len(found), 1)
        self.assertEqual(found[0].agreement, 1.0)
        self.assertEqual(found[0].rule.left_categories, frozenset({2}))

    def test_constant_column_not_retained(self):
        """A column without variation cannot beat the baseline."""
        X = np.column_stack([self.X[:, 0], np.ones(200)])
        self.assertEqual(find_surrogates(X, self.primary, [1], np.zeros(2, bool)), [])


class TestPredictTree(unittest.TestCase):
    """Tests for routing rows through a tree."""

    def setUp(self):
        self.tree = TreeNode(
            leaf_value=1.5, n_samples=10,
            primary_split=SplitRule(0, SplitKind.NUMERIC_THRESHOLD, threshold=5.0),
            surrogates=(
                Surrogate(SplitRule(1, SplitKind.NUMERIC_THRESHOLD, threshold=2.0), 0.9, False, 0.8),
                Surrogate(SplitRule(2, SplitKind.NUMERIC_THRESHOLD, threshold=0.0), 0.8, True, 0.6),
            ),
            default_direction=Direction.RIGHT,
            node_gain=0.2,
            left=TreeNode(leaf_value=1.0, n_samples=4),
            right=TreeNode(leaf_value=2.0, n_samples=6),
        )

    @staticmethod
    def traced(x0, x1, x2):
        if not math.isnan(x0):
            return 1.0 if x0 < 5.0 else 2.0
        if not math.isnan(x1):
            return 1.0 if x1 < 2.0 else 2.0
        if not math.isnan(x2):
            return 2.0 if x2 < 0.0 else 1.0
        return 2.0

    def test_hand_traced_paths(self):
        """27 missingness patterns follow primary, surrogates, then default."""
        cases = list(itertools.product([NAN, 3.0, 7.0], [NAN, 1.0, 3.0], [NAN, -1.0, 1.0]))
        rows = np.array(cases)
        batch = predict_tree_batch(self.tree, rows)
        for row, value in zip(cases, batch):
            expected = self.traced(*row)
            self.assertEqual(predict_tree(self.tree, np.array(row)), expected)
            self.assertEqual(value, expected)

    def test_perfect_surrogate_matches_primary(self):
        """Dropping the primary predictor keeps the leaf when a copy is present."""
        rng = np.random.default_rng(5)
        x = rng.normal(size=300)
        X = np.column_stack([x, x, rng.normal(size=300)])
        y = np.sin(3 * x) + 0.1 * rng.normal(size=300)
        tree = fit_tree(X, y, TreeParams(max_splits=15), rng)
        full = predict_tree_batch(tree, X)
        masked = X.copy()
        masked[:, 0] = NAN
        np.testing.assert_array_equal(predict_tree_batch(tree, masked), full)

    def test_all_missing_uses_defaults(self):
        """A row without predictors ends in the leaf of the default chain."""
        rng = np.random.default_rng(6)
        X = rng.normal(size=(100, 2))
        tree = fit_tree(X, X[:, 0] + X[:, 1], TreeParams(max_splits=7), rng)
        node = tree
        while not node.is_leaf:
            node = node.left if node.default_direction is Direction.LEFT else node.right
        self.assertEqual(predict_tree(tree, np.array([NAN, NAN])), node.leaf_value)

    @settings(max_examples=50, deadline=None)
    @given(mask=nps.arrays(np.bool_, (40, 3)))
    def test_routing_total(self, mask):
        """Every missingness pattern reaches a leaf."""
        rng = np.random.default_rng(7)
        X = rng.normal(size=(120, 3))
        tree = fit_tree(X, X @ [1.0, -1.0, 0.5], TreeParams(max_splits=20), rng)
        rows = X[:40].copy()
        rows[mask] = NAN
        self.assertTrue(np.isfinite(predict_tree_batch(tree, rows)).all())


class TestForest(unittest.TestCase):
    """Tests for ensembles."""

    def setUp(self):
        rng = np.random.default_rng(21)
        self.X = rng.uniform(-2, 2, size=(150, 3))
        self.y = np.sin(self.X[:, 0]) + 0.5 * self.X[:, 1] ** 2
        self.schema = ColumnSchema.numeric(["a", "b", "c"])

    def test_single_tree_equals_fit_tree(self):
        """One tree without bootstrap and with all predictors is fit_tree."""
        params = ForestParams(n_trees=1, max_splits=15, max_features=3, bootstrap=False)
        model = fit_forest(self.X, self.y, params, self.schema, seed=3)
        tree = fit_tree(self.X, self.y, TreeParams(max_splits=15, max_features=3),
                        np.random.default_rng(99))
        np.testing.assert_array_equal(predict_forest_batch(model, self.X)[0],
                                      predict_tree_batch(tree, self.X))

    def test_identity_fit(self):
        """y = x on 100 points is fitted to within a fifth of the data std."""
        x = np.linspace(0, 1, 100)[:, None]
        y = x[:, 0]
        model = fit_forest(x, y, ForestParams(n_trees=100), ColumnSchema.numeric(["x"]), seed=0)
        rmse = math.sqrt(np.mean((predict_forest_batch(model, x)[0] - y) ** 2))
        self.assertLess(rmse, y.std() / 5)

    def test_seed_determinism_and_threads(self):
        """Same seed gives identical models, serial or threaded."""
        params = ForestParams(n_trees=20, max_splits=31)
        first = fit_forest(self.X, self.y, params, self.schema, seed=8)
        second = fit_forest(self.X, self.y, params, self.schema, seed=8)
        threaded = fit_forest(self.X, self.y, ForestParams(n_trees=20, max_splits=31, n_jobs=4),
                              self.schema, seed=8)
        for other in (second, threaded):
            np.testing.assert_array_equal(predict_forest_batch(first, self.X)[0],
                                          predict_forest_batch(other, self.X)[0])
            np.testing.assert_array_equal(variable_importance(first), variable_importance(other))

    def test_bagged_prediction_is_tree_mean(self):
        """The bagged estimate is the mean of per-tree outputs."""
        model = fit_forest(self.X, self.y, ForestParams(n_trees=15), self.schema, seed=1)
        per_tree = per_tree_predictions(model, self.X)
        estimate, dispersion = predict_forest_batch(model, self.X)
        np.testing.assert_allclose(estimate, per_tree.mean(axis=0), rtol=0, atol=1e-12)
        np.testing.assert_allclose(dispersion, per_tree.std(axis=0), rtol=0, atol=1e-12)

    def test_boosted_reduces_error(self):
        """Boosting with more trees lowers the training error."""
        errors = []
        for n_trees in (1, 20, 100):
            params = ForestParams(n_trees=n_trees, max_splits=7, learning_rate=0.3,
                                  mode=EnsembleMode.BOOSTED)
            model = fit_forest(self.X, self.y, params, self.schema, seed=0)
            errors.append(np.mean((predict_forest_batch(model, self.X)[0] - self.y) ** 2))
        self.assertGreater(errors[0], errors[1])
        self.assertGreater(errors[1], errors[2])

    def test_two_tree_dispersion(self):
        """Trees predicting 1 and 3 give (2, 1); agreeing trees give zero dispersion."""
        schema = ColumnSchema.numeric(["x"])
        model = ForestModel((TreeNode(1.0, 1), TreeNode(3.0, 1)), ForestParams(n_trees=2), schema)
        self.assertEqual(predict_forest(model, np.array([0.0])), (2.0, 1.0))
        same = ForestModel((TreeNode(4.0, 1),) * 3, ForestParams(n_trees=3), schema)
        self.assertEqual(predict_forest(same, np.array([0.0])), (4.0, 0.0))

    def test_classification_vote(self):
        """Seven of ten votes for GRL give (GRL, 0.3)."""
        grl = TreeNode(np.array([1.0, 0.0]), 1)
        shl = TreeNode(np.array([0.0, 1.0]), 1)
        params = ForestParams(n_trees=10, task=Task.CLASSIFICATION)
        model = ForestModel((grl,) * 7 + (shl,) * 3, params, ColumnSchema.numeric(["x"]),
                            classes=("GRL", "SHL"))
        label, dispersion = predict_forest(model, np.array([0.0]))
        self.assertEqual(label, "GRL")
        self.assertAlmostEqual(dispersion, 0.3)

    def test_stump_importance(self):
        """A single split credits only its predictor."""
        X = np.column_stack([np.arange(20, dtype=float), np.ones(20)])
        y = (X[:, 0] >= 10).astype(float)
        params = ForestParams(n_trees=1, max_splits=1, max_features=2, bootstrap=False)
        model = fit_forest(X, y, params, ColumnSchema.numeric(["x", "const"]), seed=0)
        importance = variable_importance(model)
        self.assertGreater(importance[0], 0.0)
        self.assertEqual(importance[1], 0.0)

    def test_duplicate_column_importance(self):
        """Both copies of an informative column receive importance."""
        rng = np.random.default_rng(2)
        x = rng.normal(size=200)
        X = np.column_stack([x, x, rng.normal(size=200)])
        model = fit_forest(X, x ** 2, ForestParams(n_trees=30, max_splits=15),
                           ColumnSchema.numeric(["x", "x_copy", "z"]), seed=0)
        importance = variable_importance(model)
        self.assertGreater(importance[0], 0.0)
        self.assertGreater(importance[1], 0.0)

    def test_noise_ranked_last(self):
        """A pure-noise predictor ranks below three informative ones."""
        rng = np.random.default_rng(13)
        X = rng.normal(size=(300, 4))
        y = X[:, 0] + X[:, 1] + X[:, 2] + 0.1 * rng.normal(size=300)
        model = fit_forest(X, y, ForestParams(n_trees=200, max_splits=31),
                           ColumnSchema.numeric(["a", "b", "c", "noise"]), seed=0)
        ranking = importance_ranking(model)
        self.assertEqual(ranking[-1][0], "noise")
        self.assertEqual(len(importance_ranking(model, top=2)), 2)

    def test_permutation_equivariance(self):
        """Permuting columns permutes importance and keeps predictions."""
        order = [2, 0, 1]
        params = ForestParams(n_trees=3, max_features=3, max_splits=31, bootstrap=False)
        model = fit_forest(self.X, self.y, params, self.schema, seed=5)
        permuted = fit_forest(self.X[:, order], self.y, params, self.schema.permuted(order),
                              seed=5)
        np.testing.assert_allclose(predict_forest_batch(model, self.X)[0],
                                   predict_forest_batch(permuted, self.X[:, order])[0],
                                   rtol=0, atol=1e-12)
        np.testing.assert_allclose(variable_importance(model)[order],
                                   variable_importance(permuted), rtol=1e-12, atol=1e-15)

    def test_classification_forest(self):
        """A separable two-class problem is classified exactly."""
        X = np.column_stack([np.r_[np.zeros(30), np.ones(30)], np.arange(60, dtype=float)])
        labels = np.r_[np.full(30, 4), np.full(30, 6)]
        model = fit_forest(X, labels, ForestParams(n_trees=10, task=Task.CLASSIFICATION),
                           ColumnSchema.numeric(["a", "b"]), seed=0)
        predicted, dispersion = predict_forest_batch(model, X)
        np.testing.assert_array_equal(predicted, labels)
        self.assertTrue((dispersion >= 0).all())

    def test_boosted_classification_rejected(self):
        """Boosting is regression only."""
        params = ForestParams(task=Task.CLASSIFICATION, mode=EnsembleMode.BOOSTED)
        with self.assertRaises(ForestError):
            fit_forest(self.X, np.zeros(150, dtype=int), params, self.schema)


class TestSerialization(unittest.TestCase):
    """Tests for model save and load."""

    def test_round_trip_bit_exact(self):
        """Saved and reloaded forests predict identically, missing values included."""
        rng = np.random.default_rng(9)
        X = np.column_stack([rng.normal(size=200), rng.integers(0, 4, size=200),
                             rng.normal(size=200)])
        y = X[:, 0] + (X[:, 1] == 2) * 3.0
        X[rng.random(X.shape) < 0.2] = NAN
        schema = ColumnSchema((ColumnSpec("a"),
                               ColumnSpec("cat", ColumnKind.CATEGORICAL, ("w", "x", "y", "z")),
                               ColumnSpec("c")))
        for mode in EnsembleMode:
            model = fit_forest(X, y, ForestParams(n_trees=5, mode=mode), schema, seed=4)
            with TemporaryDirectory() as temp_dir:
                path = os.path.join(temp_dir, "model.json")
                save_forest(model, path)
                loaded = load_forest(path)
            for a, b in zip(predict_forest_batch(model, X), predict_forest_batch(loaded, X)):
                np.testing.assert_array_equal(a, b)
            self.assertEqual(loaded.column_schema, schema)
            np.testing.assert_array_equal(loaded.training_mse_decrease,
                                          model.training_mse_decrease)


if __name__ == "__main__":
    unittest.main()
