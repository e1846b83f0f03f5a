"""Tests for the pft_downscale package."""

import json
import os
import unittest
from tempfile import TemporaryDirectory

import numpy as np
from hypothesis import given, settings, strategies as st

from pft_downscale import (
    AbundanceGrid,
    ClassificationError,
    ClassificationReport,
    ClassifyProcessor,
    ConfusionMatrix,
    aggregate_abundance,
    classify_map,
    confusion_and_kappa,
    dominant_pft,
    read_abundance,
    run_classification,
    select_training_samples,
    train_classifier,
    write_abundance,
)
from raster_features import (
    FeatureRaster,
    GeometryMismatchError,
    GridGeometry,
    RasterGrid,
    feature_band_names,
    read_tsr,
    read_tsr_header,
    write_feature_raster,
    write_tsr,
)
from surrogate_forest import ForestParams, Task, predict_forest_batch
from trait_table import PftClass
from validate_report import check_report

TABLE_COUNTS = np.array([
    [870, 5, 7, 4, 3, 2, 0],
    [3, 971, 0, 2, 0, 0, 0],
    [15, 1, 406, 0, 0, 2, 0],
    [3, 2, 1, 992, 0, 2, 0],
    [4, 4, 10, 4, 737, 78, 15],
    [1, 1, 4, 4, 30, 934, 20],
    [0, 0, 0, 0, 4, 17, 965],
])

SMALL_FOREST = ForestParams(n_trees=15, task=Task.CLASSIFICATION, min_node_size=1)


def geometry(width, height, pixel_size=1.0, origin_x=0.0, origin_y=None):
    top = height * pixel_size if origin_y is None else origin_y
    return GridGeometry(width, height, origin_x, top, pixel_size)


def class_pattern(height, width):
    """Class codes 1-7 in 2x2 patches."""
    rows = np.arange(height)[:, None] // 2
    cols = np.arange(width)[None, :] // 2
    return ((rows + cols) % 7 + 1).astype(float)


def separable_features(classes, geom, seed=0, noise=0.005):
    """Every feature band is a distinct linear function of the class plus small noise."""
    rng = np.random.default_rng(seed)
    bands = {}
    for k, name in enumerate(feature_band_names()):
        values = 0.05 * (k + 1) * classes + (k % 3) + rng.normal(0.0, noise, classes.shape)
        bands[name] = RasterGrid(geom, values, band_id=name)
    return FeatureRaster(bands)


def with_band_values(features, updates):
    """Copy of ``features`` with some band arrays replaced."""
    bands = dict(features.bands)
    for name, values in updates.items():
        bands[name] = RasterGrid.from_masked(features.geometry, values, band_id=name)
    return FeatureRaster(bands)


class TestConfusionAndKappa(unittest.TestCase):
    """Confusion matrix statistics."""

    def test_published_counts(self):
        """The published seven-class counts give 96% accuracy."""
        cm = ConfusionMatrix(TABLE_COUNTS)
        self.assertEqual(cm.total, 6123)
        self.assertAlmostEqual(cm.overall_accuracy, 5875 / 6123)
        self.assertAlmostEqual(cm.overall_accuracy, 0.9595, delta=0.0005)
        self.assertAlmostEqual(cm.overall_accuracy, 0.96, delta=0.005)
        self.assertAlmostEqual(cm.kappa, 0.9524, delta=0.001)

    def test_labels_reproduce_published_counts(self):
        """Expanding the counts to label vectors recovers the same matrix."""
        codes = [int(c) for c in PftClass]
        ref, pred = [], []
        for i, r in enumerate(codes):
            for j, p in enumerate(codes):
                ref += [r] * TABLE_COUNTS[i, j]
                pred += [p] * TABLE_COUNTS[i, j]
        cm, accuracy, kappa = confusion_and_kappa(ref, pred)
        np.testing.assert_array_equal(cm.counts, TABLE_COUNTS)
        self.assertAlmostEqual(accuracy, 0.9595, delta=0.0005)
        self.assertAlmostEqual(kappa, ConfusionMatrix(TABLE_COUNTS).kappa)

    def test_perfect_agreement(self):
        """A diagonal matrix gives accuracy 1 and kappa 1."""
        labels = [1, 2, 3, 4, 5, 6, 7, 1, 2]
        cm, accuracy, kappa = confusion_and_kappa(labels, labels)
        self.assertEqual(accuracy, 1.0)
        self.assertAlmostEqual(kappa, 1.0)
        self.assertTrue(cm.kappa_defined)

    def test_chance_agreement(self):
        """Constant predictions over a balanced reference give kappa 0."""
        _, accuracy, kappa = confusion_and_kappa([1, 1, 2, 2], [1, 1, 1, 1])
        self.assertEqual(accuracy, 0.5)
        self.assertAlmostEqual(kappa, 0.0)

    def test_undefined_kappa(self):
        """A single shared class makes chance agreement 1 and kappa undefined."""
        cm, accuracy, kappa = confusion_and_kappa([3, 3, 3], [3, 3, 3])
        self.assertEqual(accuracy, 1.0)
        self.assertIsNone(kappa)
        self.assertFalse(cm.kappa_defined)

    def test_invalid_inputs(self):
        """Mismatched, empty and unknown labels are rejected."""
        with self.assertRaises(ClassificationError):
            confusion_and_kappa([1, 2], [1])
        with self.assertRaises(ClassificationError):
            confusion_and_kappa([], [])
        with self.assertRaises(ClassificationError):
            confusion_and_kappa([1, 9], [1, 1])

    def test_per_class_accuracies(self):
        """Producer accuracy is per reference row, user accuracy per predicted column."""
        cm, _, _ = confusion_and_kappa([1, 1, 1, 2], [1, 1, 2, 2])
        self.assertAlmostEqual(cm.producer_accuracy()["ENF"], 2 / 3)
        self.assertEqual(cm.producer_accuracy()["EBF"], 1.0)
        self.assertEqual(cm.user_accuracy()["ENF"], 1.0)
        self.assertEqual(cm.user_accuracy()["EBF"], 0.5)
        self.assertIsNone(cm.user_accuracy()["BARREN"])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(1, 7), st.integers(1, 7)), min_size=2, max_size=60),
           st.permutations(list(range(1, 8))))
    def test_kappa_relabeling_invariance(self, pairs, relabel):
        """Kappa is unchanged by a shared relabeling and never exceeds accuracy."""
        ref = [r for r, _ in pairs]
        pred = [p for _, p in pairs]
        cm, accuracy, kappa = confusion_and_kappa(ref, pred)
        mapping = dict(zip(range(1, 8), relabel))
        _, _, relabeled = confusion_and_kappa([mapping[r] for r in ref], [mapping[p] for p in pred])
        if kappa is None:
            self.assertIsNone(relabeled)
        else:
            self.assertAlmostEqual(kappa, relabeled)
            if cm.expected_agreement > 0:
                self.assertLessEqual(kappa, accuracy + 1e-12)
        self.assertEqual(cm.total, len(pairs))


class TestSampleSelection(unittest.TestCase):
    """Reliable reference pixel sampling."""

    def setUp(self):
        self.geom = geometry(10, 10)
        self.reference = RasterGrid(self.geom, (np.arange(100) % 7 + 1).reshape(10, 10))

    def test_full_availability(self):
        """With enough reliable pixels every class gets exactly per_class samples."""
        samples = select_training_samples(self.reference, RasterGrid(self.geom, np.ones(100)),
                                          per_class=10, seed=1)
        self.assertEqual(set(samples.counts().values()), {10})
        self.assertEqual(samples.shortfalls, {})
        self.assertEqual(len(set(samples.pixels.tolist())), 70)
        np.testing.assert_array_equal(self.reference.values.ravel()[samples.pixels], samples.labels)

    def test_shortfall_is_reported(self):
        """A class with three reliable pixels yields three samples and a shortfall."""
        quality = np.ones(100)
        dbf = np.flatnonzero(self.reference.values.ravel() == int(PftClass.DBF))
        quality[dbf[3:]] = 0.5
        with self.assertLogs("traitscale", level="WARNING"):
            samples = select_training_samples(self.reference, RasterGrid(self.geom, quality),
                                              per_class=10, seed=1)
        self.assertEqual(samples.counts()["DBF"], 3)
        self.assertEqual(samples.shortfalls, {"DBF": 7})

    def test_threshold_is_strict(self):
        """Pixels exactly at the threshold do not qualify."""
        quality = RasterGrid(self.geom, np.full(100, 0.85))
        with self.assertLogs("traitscale", level="WARNING"):
            samples = select_training_samples(self.reference, quality, per_class=5)
        self.assertEqual(samples.pixels.size, 0)
        self.assertEqual(len(samples.shortfalls), 7)

    def test_same_seed_same_sample(self):
        """The same seed draws the same pixels; another seed draws others."""
        quality = RasterGrid(self.geom, np.ones(100))
        a = select_training_samples(self.reference, quality, per_class=5, seed=3)
        b = select_training_samples(self.reference, quality, per_class=5, seed=3)
        c = select_training_samples(self.reference, quality, per_class=5, seed=4)
        np.testing.assert_array_equal(a.pixels, b.pixels)
        self.assertFalse(np.array_equal(a.pixels, c.pixels))

    def test_geometry_mismatch(self):
        """Quality on another grid is rejected."""
        quality = RasterGrid(geometry(10, 10, origin_x=5.0), np.ones(100))
        with self.assertRaises(GeometryMismatchError):
            select_training_samples(self.reference, quality)


class TestTrainClassifier(unittest.TestCase):
    """Classifier training with a stratified validation half."""

    def test_separable_classes(self):
        """Linearly separable classes validate perfectly."""
        rng = np.random.default_rng(0)
        labels = np.repeat([1, 6], 100)
        X = np.column_stack([np.where(labels == 1, 0.0, 2.0) + rng.random(200), rng.random(200)])
        classifier = train_classifier(X, labels, ["B1med", "noise"], SMALL_FOREST, seed=0)
        self.assertEqual(classifier.train_index.size, 100)
        self.assertEqual(classifier.validation_index.size, 100)
        self.assertEqual(classifier.validation_matrix().overall_accuracy, 1.0)
        self.assertEqual(set(classifier.validation_reference.tolist()), {1, 6})
        self.assertEqual(int((classifier.validation_reference == 1).sum()), 50)

    def test_shuffled_labels_are_chance(self):
        """Labels unrelated to the features validate near 1/k."""
        rng = np.random.default_rng(1)
        labels = rng.permutation(np.repeat([1, 2, 3], 200))
        X = rng.random((600, 4))
        params = ForestParams(n_trees=25, task=Task.CLASSIFICATION, min_node_size=1)
        classifier = train_classifier(X, labels, ["a", "b", "c", "d"], params, seed=2)
        accuracy = classifier.validation_matrix().overall_accuracy
        self.assertAlmostEqual(accuracy, 1 / 3, delta=0.1)

    def test_duplicated_column_same_votes(self):
        """Refitting with a duplicated feature column leaves the votes unchanged."""
        rng = np.random.default_rng(3)
        labels = rng.choice([1, 4, 5], size=120)
        X = rng.normal(size=(120, 3)) + labels[:, None] * 0.3
        params = ForestParams(n_trees=8, task=Task.CLASSIFICATION, max_features=100)
        base = train_classifier(X, labels, ["a", "b", "c"], params, seed=5)
        dup = train_classifier(np.column_stack([X, X[:, 1]]), labels, ["a", "b", "c", "b2"],
                               params, seed=5)
        np.testing.assert_array_equal(predict_forest_batch(base.model, X)[0],
                                      predict_forest_batch(dup.model,
                                                           np.column_stack([X, X[:, 1]]))[0])

    def test_single_class_is_rejected(self):
        """One class cannot train a classifier."""
        with self.assertRaises(ClassificationError):
            train_classifier(np.zeros((10, 2)), [3] * 10, ["a", "b"], SMALL_FOREST)


class TestClassifyMap(unittest.TestCase):
    """Per-pixel classification of a feature raster."""

    @classmethod
    def setUpClass(cls):
        cls.geom = geometry(16, 16)
        cls.classes = class_pattern(16, 16)
        cls.features = separable_features(cls.classes, cls.geom)
        cls.classifier = train_classifier(cls.features.matrix(), cls.classes.ravel().astype(int),
                                          cls.features.names, SMALL_FOREST, seed=0)

    def test_reproduces_reference(self):
        """Classifying the training raster reproduces at least 95% of the labels."""
        out = classify_map(self.classifier, self.features)
        self.assertTrue(out.valid.all())
        self.assertGreaterEqual(float((out.values == self.classes).mean()), 0.95)

    def test_training_pixel_is_memorized(self):
        """A training pixel of class DBF is classified DBF."""
        dbf = [i for i in self.classifier.train_index
               if self.classes.ravel()[i] == int(PftClass.DBF)]
        row, col = divmod(int(dbf[0]), 16)
        out = classify_map(self.classifier, self.features)
        self.assertEqual(out.values[row, col], float(PftClass.DBF))

    def test_missing_features(self):
        """All-missing pixels are nodata; partly missing ones are still classified."""
        updates = {}
        for name in self.features.names:
            values = self.features.bands[name].values.copy()
            values[0, 0] = np.nan
            if name == "B1med":
                values[1, 1] = np.nan
            updates[name] = values
        out = classify_map(self.classifier, with_band_values(self.features, updates))
        self.assertFalse(out.valid[0, 0])
        self.assertTrue(out.valid[1, 1])

    def test_mask_excludes_pixels(self):
        """Pixels flagged in the mask are nodata."""
        mask = np.zeros((16, 16))
        mask[2, 2] = 1.0
        out = classify_map(self.classifier, self.features, RasterGrid(self.geom, mask))
        self.assertFalse(out.valid[2, 2])
        self.assertEqual(int(out.valid.sum()), 255)

    def test_threads_match_serial(self):
        """Row-block threading does not change the map."""
        serial = classify_map(self.classifier, self.features)
        threaded = classify_map(self.classifier, self.features, n_jobs=3, block_rows=5)
        np.testing.assert_array_equal(serial.values, threaded.values)

    def test_schema_mismatch(self):
        """A classifier trained on other bands is rejected."""
        X = np.random.default_rng(0).random((20, 2))
        other = train_classifier(X, [1, 2] * 10, ["B1med", "Bogus"], SMALL_FOREST)
        with self.assertRaises(ClassificationError):
            classify_map(other, self.features)


class TestAbundance(unittest.TestCase):
    """Aggregation of fine classes to coarse PFT fractions."""

    def test_homogeneous_block(self):
        """A 16x16 grassland block is pure grassland."""
        fine = RasterGrid(geometry(16, 16), np.full((16, 16), float(PftClass.GRL)))
        abundance = aggregate_abundance(fine, geometry(1, 1, pixel_size=16.0))
        self.assertEqual(abundance.at(0, 0)[PftClass.GRL], 1.0)
        self.assertEqual(sum(abundance.at(0, 0).values()), 1.0)

    def test_even_split(self):
        """128 ENF and 128 SHL pixels give 0.5 each."""
        values = np.full((16, 16), float(PftClass.ENF))
        values[8:] = float(PftClass.SHL)
        abundance = aggregate_abundance(RasterGrid(geometry(16, 16), values),
                                        geometry(1, 1, pixel_size=16.0))
        self.assertEqual(abundance.fraction(PftClass.ENF)[0, 0], 0.5)
        self.assertEqual(abundance.fraction(PftClass.SHL)[0, 0], 0.5)
        self.assertEqual(dominant_pft(abundance).values[0, 0], float(PftClass.ENF))

    def test_empty_block_is_nodata(self):
        """A block with no valid fine pixel is nodata."""
        values = np.full((4, 8), float(PftClass.DBF))
        values[:, 4:] = np.nan
        abundance = aggregate_abundance(RasterGrid.from_masked(geometry(8, 4), values),
                                        geometry(2, 1, pixel_size=4.0))
        self.assertEqual(abundance.valid.tolist(), [[True, False]])
        self.assertFalse(dominant_pft(abundance).valid[0, 1])

    def test_fractions_sum_to_one(self):
        """Every valid coarse cell sums to 1 and ignores nodata fine pixels."""
        rng = np.random.default_rng(4)
        values = rng.integers(1, 8, size=(32, 32)).astype(float)
        values[rng.random((32, 32)) < 0.2] = np.nan
        abundance = aggregate_abundance(RasterGrid.from_masked(geometry(32, 32), values),
                                        geometry(4, 4, pixel_size=8.0))
        sums = abundance.fractions.sum(axis=0)
        np.testing.assert_allclose(sums[abundance.valid], 1.0, atol=1e-9)
        self.assertTrue(np.all((abundance.fractions >= 0) & (abundance.fractions <= 1)))

    def test_traversal_order_invariance(self):
        """Reordering fine pixels inside each block leaves the fractions unchanged."""
        rng = np.random.default_rng(5)
        values = rng.integers(1, 8, size=(16, 16)).astype(float)
        blocks = values.reshape(4, 4, 4, 4)
        flipped = blocks[:, ::-1, :, ::-1].reshape(16, 16)
        coarse = geometry(4, 4, pixel_size=4.0)
        a = aggregate_abundance(RasterGrid(geometry(16, 16), values), coarse)
        b = aggregate_abundance(RasterGrid(geometry(16, 16), flipped), coarse)
        np.testing.assert_array_equal(a.fractions, b.fractions)

    def test_misaligned_grids(self):
        """Non-integer ratios and shifted origins are rejected."""
        fine = RasterGrid(geometry(16, 16), np.ones((16, 16)))
        with self.assertRaises(GeometryMismatchError):
            aggregate_abundance(fine, geometry(3, 3, pixel_size=16 / 3 + 0.1))
        with self.assertRaises(GeometryMismatchError):
            aggregate_abundance(fine, geometry(4, 4, pixel_size=4.0, origin_x=1.0, origin_y=16.0))

    def test_tsr_round_trip(self):
        """Abundance grids survive the multi-band container."""
        values = np.full((8, 8), float(PftClass.EBF))
        values[:, :4] = float(PftClass.BARREN)
        abundance = aggregate_abundance(RasterGrid(geometry(8, 8), values),
                                        geometry(1, 1, pixel_size=8.0))
        with TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "abundance.tsr")
            write_abundance(abundance, path)
            back = read_abundance(path)
            self.assertEqual(read_tsr_header(path).class_codes["BARREN"], 7)
        np.testing.assert_array_equal(back.fractions, abundance.fractions)
        self.assertEqual(back.fraction(PftClass.BARREN)[0, 0], 0.5)
        self.assertEqual(back.vegetated_fraction()[0, 0], 0.5)

    def test_dominant_tie_goes_to_lower_code(self):
        """Equal fractions resolve to the lower class code."""
        fractions = np.zeros((7, 1, 1))
        fractions[3] = fractions[5] = 0.5
        out = dominant_pft(AbundanceGrid(geometry(1, 1), fractions))
        self.assertEqual(out.values[0, 0], float(PftClass.DBF))


class TestClassifyStage(unittest.TestCase):
    """End-to-end downscaling on a synthetic world."""

    def setUp(self):
        self.coarse = geometry(8, 8, pixel_size=4.0)
        self.fine = geometry(32, 32)
        self.reference = RasterGrid(self.coarse, class_pattern(8, 8), band_id="pft")
        self.fine_classes = np.kron(class_pattern(8, 8), np.ones((4, 4)))
        self.features = separable_features(self.fine_classes, self.fine, seed=1)

    def test_run_classification(self):
        """Training on block means and classifying the fine grid recovers the pattern."""
        quality = RasterGrid(self.coarse, np.ones((8, 8)))
        classes, abundance, classifier, report = run_classification(
            self.features, self.reference, quality, per_class=4, n_trees=10, seed=0)
        self.assertIsInstance(report, ClassificationReport)
        self.assertEqual(report.samples_per_class["GRL"], 4)
        self.assertEqual(report.n_train, 14)
        self.assertGreaterEqual(float((classes.values == self.fine_classes).mean()), 0.9)
        self.assertGreaterEqual(report.degraded.overall_accuracy, 0.9)
        np.testing.assert_allclose(abundance.fractions.sum(axis=0), 1.0, atol=1e-9)
        check_report(report.model_dump(mode="json"), "classification_report")

    def test_processor_writes_outputs(self):
        """The classify stage writes the class map, abundances and a valid report."""
        with TemporaryDirectory() as tmp:
            features_dir = os.path.join(tmp, "features")
            write_feature_raster(self.features, features_dir)
            ref = os.path.join(tmp, "ref.tsr")
            qa = os.path.join(tmp, "qa.tsr")
            write_tsr(self.reference, ref)
            write_tsr(RasterGrid(self.coarse, np.ones((8, 8))), qa)
            out = os.path.join(tmp, "classes.tsr")
            abundance = os.path.join(tmp, "abundance.tsr")
            report = os.path.join(tmp, "cls_report.json")
            code = ClassifyProcessor([
                "--features", features_dir, "--reference", ref, ref, "--quality", qa,
                "--out", out, "--abundance", abundance, "--report", report,
                "--per-class", "4", "--n-trees", "5", "--seed", "2"]).run()
            self.assertEqual(code, 0)
            self.assertEqual(read_tsr(out).shape, (32, 32))
            self.assertEqual(read_tsr_header(out).class_codes["ENF"], 1)
            self.assertEqual(read_abundance(abundance).geometry, self.coarse)
            with open(report) as f:
                data = json.load(f)
            self.assertEqual(len(data["validation"]["confusion_matrix"]), 7)
            self.assertEqual(data["seed"], 2)

    def test_processor_failure(self):
        """A missing feature directory fails the stage with exit code 1."""
        with TemporaryDirectory() as tmp:
            ref = os.path.join(tmp, "ref.tsr")
            write_tsr(self.reference, ref)
            with self.assertLogs("traitscale", level="ERROR"):
                code = ClassifyProcessor([
                    "--features", os.path.join(tmp, "missing"), "--reference", ref,
                    "--quality", ref, "--out", os.path.join(tmp, "c.tsr"),
                    "--abundance", os.path.join(tmp, "a.tsr"),
                    "--report", os.path.join(tmp, "r.json")]).run()
        self.assertEqual(code, 1)


if __name__ == "__main__":
    unittest.main()
