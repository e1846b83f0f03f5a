"""Tests for the cwm package."""

import math
import os
import unittest
from tempfile import TemporaryDirectory

import numpy as np
from hypothesis import given, settings, strategies as st

from cwm import (
    ABUNDANCE_COLUMNS,
    CwmConfig,
    CwmError,
    CwmProcessor,
    CwmRejection,
    CwmSample,
    RecordIndex,
    build_training_set,
    haversine_km,
    neighbor_select,
    pixel_cwm,
    read_cwm_csv,
    write_cwm_csv,
)
from pft_downscale import AbundanceGrid, write_abundance
from raster_features import (
    FeatureRaster,
    GeometryMismatchError,
    GridGeometry,
    RasterGrid,
    feature_band_names,
    write_feature_raster,
    write_tsr,
)
from trait_table import (
    BIOCLIM_COLUMNS,
    GrowthForm,
    LeafPhenology,
    LeafType,
    PftClass,
    Trait,
    TraitRecord,
    TraitTable,
    save_trait_table,
)

CATEGORIES = {
    PftClass.ENF: (GrowthForm.TREE, LeafType.NEEDLELEAF, LeafPhenology.EVERGREEN),
    PftClass.EBF: (GrowthForm.TREE, LeafType.BROADLEAF, LeafPhenology.EVERGREEN),
    PftClass.DNF: (GrowthForm.TREE, LeafType.NEEDLELEAF, LeafPhenology.DECIDUOUS),
    PftClass.DBF: (GrowthForm.TREE, LeafType.BROADLEAF, LeafPhenology.DECIDUOUS),
    PftClass.SHL: (GrowthForm.SHRUB, LeafType.BROADLEAF, LeafPhenology.DECIDUOUS),
    PftClass.GRL: (GrowthForm.GRASS, LeafType.UNKNOWN, LeafPhenology.UNKNOWN),
}


def record(record_id, pft, lat, lon, sla=10.0, ldmc=0.3, lnc=20.0, lpc=1.5, lnpr=13.0):
    growth_form, leaf_type, phenology = CATEGORIES[pft]
    return TraitRecord(record_id=record_id, species=f"Species {record_id}", genus="Genus",
                       family="Family", growth_form=growth_form, leaf_type=leaf_type,
                       leaf_phenology=phenology, latitude=lat, longitude=lon,
                       traits=(sla, ldmc, lnc, lpc, lnpr))


def abundance_vector(**fractions):
    return [fractions.get(p.name, 0.0) for p in PftClass]


def constant_features(geom, value=1.0):
    bands = {name: RasterGrid(geom, np.full(geom.shape, value + k), band_id=name)
             for k, name in enumerate(feature_band_names())}
    return FeatureRaster(bands)


def brute_force_cwm(center, fractions, records, max_km, k, min_represented=0.5):
    """Exhaustive reference: every record is measured, no spatial index."""
    lat, lon = center
    vegetated = sum(fractions[int(p) - 1] for p in PftClass if p != PftClass.BARREN)
    if vegetated <= 0:
        return None
    weights, means = [], []
    for pft in PftClass:
        if pft == PftClass.BARREN or fractions[int(pft) - 1] <= 0:
            continue
        candidates = []
        for r in records:
            if r.latitude is None or pft not in CATEGORIES or CATEGORIES[pft] != (
                    r.growth_form, r.leaf_type, r.leaf_phenology):
                continue
            d = haversine_km(lat, lon, r.latitude, r.longitude)
            if d <= max_km:
                candidates.append((d, r.record_id, r.traits))
        candidates.sort(key=lambda c: (c[0], c[1]))
        chosen = candidates[:k]
        if chosen:
            weights.append(fractions[int(pft) - 1])
            means.append(np.mean([c[2] for c in chosen], axis=0))
    if sum(weights) / vegetated <= min_represented:
        return None
    w = np.asarray(weights)
    return (w[:, None] * np.vstack(means)).sum(axis=0) / w.sum()


class TestHaversine(unittest.TestCase):
    """Great-circle distances."""

    def test_identical_points(self):
        """A point is at distance zero from itself."""
        self.assertEqual(haversine_km(45.0, 7.0, 45.0, 7.0), 0.0)

    def test_antipodal_on_equator(self):
        """Opposite points on the equator are half a circumference apart."""
        self.assertAlmostEqual(haversine_km(0.0, 0.0, 0.0, 180.0), math.pi * 6371.0088, places=6)
        self.assertAlmostEqual(haversine_km(0.0, 0.0, 0.0, 180.0), 20015.1, delta=0.1)

    def test_one_degree_of_arc(self):
        """One degree along the equator is R times pi over 180."""
        self.assertAlmostEqual(haversine_km(0.0, 0.0, 0.0, 1.0), 111.195, delta=0.001)

    def test_dateline(self):
        """Longitudes either side of the antimeridian are close."""
        self.assertAlmostEqual(haversine_km(0.0, 179.5, 0.0, -179.5), 111.195, delta=0.001)

    def test_vectorized(self):
        """Array arguments broadcast against a scalar point."""
        d = haversine_km(0.0, 0.0, np.array([0.0, 0.0]), np.array([0.0, 1.0]))
        np.testing.assert_allclose(d, [0.0, 111.19508], atol=1e-4)


class TestNeighborSelect(unittest.TestCase):
    """Per-PFT record selection."""

    def test_ten_closest(self):
        """Of 15 in-range DBF records the 10 closest are kept in order."""
        records = [record(f"r{i:02d}", PftClass.DBF, 0.01 * (i + 1), 0.0) for i in range(15)]
        index = RecordIndex(TraitTable(records))
        chosen = neighbor_select((0.0, 0.0), index, PftClass.DBF)
        self.assertEqual([n.record_id for n in chosen], [f"r{i:02d}" for i in range(10)])
        distances = [n.distance_km for n in chosen]
        self.assertEqual(distances, sorted(distances))

    def test_beyond_threshold(self):
        """Records further than max_km are never selected."""
        records = [record(f"r{i}", PftClass.DBF, 1.0 + 0.1 * i, 0.0) for i in range(5)]
        index = RecordIndex(TraitTable(records))
        self.assertEqual(neighbor_select((0.0, 0.0), index, PftClass.DBF, max_km=100.0), [])

    def test_tie_prefers_lower_record_id(self):
        """Equidistant records at the cut are resolved by record_id."""
        records = [record("b", PftClass.GRL, 0.0, 0.1), record("a", PftClass.GRL, 0.0, -0.1)]
        index = RecordIndex(TraitTable(records))
        chosen = neighbor_select((0.0, 0.0), index, PftClass.GRL, k=1)
        self.assertEqual([n.record_id for n in chosen], ["a"])

    def test_other_pft_ignored(self):
        """Only records of the requested PFT are returned."""
        records = [record("a", PftClass.ENF, 0.0, 0.0), record("b", PftClass.DBF, 0.0, 0.0)]
        index = RecordIndex(TraitTable(records))
        chosen = neighbor_select((0.0, 0.0), index, PftClass.ENF)
        self.assertEqual([n.record_id for n in chosen], ["a"])
        self.assertEqual(neighbor_select((0.0, 0.0), index, PftClass.EBF), [])

    def test_excluded_records(self):
        """Records without coordinates or with missing traits are not indexed."""
        full = record("a", PftClass.GRL, 0.0, 0.0)
        no_coords = TraitRecord(record_id="b", species="S b", genus="G", family="F",
                                growth_form=GrowthForm.GRASS, traits=(1.0, 0.2, 1.0, 1.0, 1.0))
        gap = record("c", PftClass.GRL, 0.0, 0.0).with_trait(Trait.LPC, None)
        index = RecordIndex(TraitTable([full, no_coords, gap]))
        self.assertEqual(len(index), 1)
        self.assertEqual(index.count(PftClass.GRL), 1)

    def test_invalid_arguments(self):
        """Non-positive distances and k below one are rejected."""
        index = RecordIndex(TraitTable([record("a", PftClass.GRL, 0.0, 0.0)]))
        with self.assertRaises(ValueError):
            neighbor_select((0.0, 0.0), index, PftClass.GRL, max_km=0.0)
        with self.assertRaises(ValueError):
            neighbor_select((0.0, 0.0), index, PftClass.GRL, k=0)

    def test_near_pole(self):
        """Records across the pole are found when within range."""
        records = [record("a", PftClass.ENF, 89.7, 0.0), record("b", PftClass.ENF, 89.7, 180.0)]
        index = RecordIndex(TraitTable(records))
        chosen = neighbor_select((89.7, 90.0), index, PftClass.ENF)
        self.assertEqual(sorted(n.record_id for n in chosen), ["a", "b"])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0)), min_size=1, max_size=30),
           st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.integers(1, 6))
    def test_matches_exhaustive_search(self, points, lat, lon, k):
        """The prefiltered search equals sorting every record by (distance, id)."""
        records = [record(f"r{i:02d}", PftClass.SHL, a, b) for i, (a, b) in enumerate(points)]
        index = RecordIndex(TraitTable(records))
        expected = sorted((haversine_km(lat, lon, r.latitude, r.longitude), r.record_id)
                          for r in records)
        expected = [rid for d, rid in expected if d <= 150.0][:k]
        chosen = neighbor_select((lat, lon), index, PftClass.SHL, max_km=150.0, k=k)
        self.assertEqual([n.record_id for n in chosen], expected)

    def test_removing_distant_record_is_neutral(self):
        """Dropping a record beyond max_km leaves the selection unchanged."""
        near = [record(f"r{i}", PftClass.DBF, 0.1 * i, 0.0) for i in range(4)]
        far = record("zz", PftClass.DBF, 5.0, 5.0)
        with_far = neighbor_select((0.0, 0.0), RecordIndex(TraitTable(near + [far])), PftClass.DBF)
        without = neighbor_select((0.0, 0.0), RecordIndex(TraitTable(near)), PftClass.DBF)
        self.assertEqual(with_far, without)


class TestPixelCwm(unittest.TestCase):
    """Community-weighted means of single pixels."""

    def test_weighted_mean(self):
        """60% GRL at SLA 20 and 40% SHL at SLA 15 give SLA 18."""
        records = [record("g1", PftClass.GRL, 0.0, 0.1, sla=19.0),
                   record("g2", PftClass.GRL, 0.0, 0.2, sla=21.0),
                   record("s1", PftClass.SHL, 0.1, 0.0, sla=15.0)]
        index = RecordIndex(TraitTable(records))
        sample = pixel_cwm(0, (0.0, 0.0), abundance_vector(GRL=0.6, SHL=0.4), index)
        self.assertIsInstance(sample, CwmSample)
        self.assertAlmostEqual(sample.trait_values[0], 18.0)
        self.assertAlmostEqual(sample.represented_fraction, 1.0)
        self.assertEqual([rid for rid, _ in sample.contributing_records[PftClass.GRL]], ["g1", "g2"])

    def test_single_pft_is_plain_mean(self):
        """A pure ENF pixel takes the plain mean of its selected records."""
        records = [record(f"e{i}", PftClass.ENF, 0.05 * i, 0.0, sla=4.0 + i, lnc=10.0 + 2 * i)
                   for i in range(4)]
        index = RecordIndex(TraitTable(records))
        sample = pixel_cwm(3, (0.0, 0.0), abundance_vector(ENF=1.0), index)
        self.assertAlmostEqual(sample.trait_values[0], 5.5)
        self.assertAlmostEqual(sample.trait_values[2], 13.0)
        self.assertEqual(sample.pixel_id, 3)

    def test_rejected_when_underrepresented(self):
        """60% EBF without records and 40% GRL represented is rejected."""
        index = RecordIndex(TraitTable([record("g", PftClass.GRL, 0.0, 0.0)]))
        outcome = pixel_cwm(0, (0.0, 0.0), abundance_vector(EBF=0.6, GRL=0.4), index)
        self.assertIsInstance(outcome, CwmRejection)
        self.assertAlmostEqual(outcome.represented_fraction, 0.4)

    def test_half_is_rejected(self):
        """Exactly half represented does not pass the filter."""
        index = RecordIndex(TraitTable([record("g", PftClass.GRL, 0.0, 0.0)]))
        outcome = pixel_cwm(0, (0.0, 0.0), abundance_vector(EBF=0.5, GRL=0.5), index)
        self.assertIsInstance(outcome, CwmRejection)

    def test_renormalized_over_represented(self):
        """A represented majority is renormalized over the represented PFTs only."""
        records = [record("g", PftClass.GRL, 0.0, 0.0, sla=20.0),
                   record("s", PftClass.SHL, 0.0, 0.0, sla=10.0)]
        index = RecordIndex(TraitTable(records))
        sample = pixel_cwm(0, (0.0, 0.0), abundance_vector(GRL=0.3, SHL=0.3, EBF=0.2), index)
        self.assertAlmostEqual(sample.represented_fraction, 0.75)
        self.assertAlmostEqual(sample.trait_values[0], 15.0)

    def test_barren_excluded(self):
        """BARREN abundance neither counts as unrepresented nor contributes traits."""
        index = RecordIndex(TraitTable([record("g", PftClass.GRL, 0.0, 0.0, sla=20.0)]))
        sample = pixel_cwm(0, (0.0, 0.0), abundance_vector(GRL=0.3, BARREN=0.7), index)
        self.assertAlmostEqual(sample.represented_fraction, 1.0)
        self.assertAlmostEqual(sample.trait_values[0], 20.0)

    def test_no_vegetation(self):
        """A fully barren pixel is rejected."""
        index = RecordIndex(TraitTable([record("g", PftClass.GRL, 0.0, 0.0)]))
        outcome = pixel_cwm(0, (0.0, 0.0), abundance_vector(BARREN=1.0), index)
        self.assertIsInstance(outcome, CwmRejection)
        self.assertEqual(outcome.reason, "no vegetation")

    def test_contributing_distances_within_limit(self):
        """Every contributing record lies within the configured distance."""
        records = [record(f"d{i}", PftClass.DBF, 0.2 * i, 0.0) for i in range(10)]
        index = RecordIndex(TraitTable(records))
        sample = pixel_cwm(0, (0.0, 0.0), abundance_vector(DBF=1.0), index, CwmConfig(max_km=50.0))
        distances = [d for _, d in sample.contributing_records[PftClass.DBF]]
        self.assertTrue(distances)
        self.assertTrue(all(d <= 50.0 for d in distances))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=7, max_size=7), st.floats(0.1, 10.0))
    def test_convex_and_scale_invariant(self, fractions, scale):
        """CWM lies within the per-PFT means and ignores the abundance scale."""
        records = [record(f"{p.name}{j}", p, 0.01 * j, 0.01 * int(p), sla=5.0 * int(p) + j,
                          lnc=30.0 - 3.0 * int(p))
                   for p in CATEGORIES for j in range(2)]
        index = RecordIndex(TraitTable(records))
        first = pixel_cwm(0, (0.0, 0.0), fractions, index)
        second = pixel_cwm(0, (0.0, 0.0), [f * scale for f in fractions], index)
        self.assertEqual(type(first), type(second))
        if isinstance(first, CwmRejection):
            return
        np.testing.assert_allclose(first.trait_values, second.trait_values, rtol=1e-12)
        contributing = [p for p in first.contributing_records]
        pft_sla = [5.0 * int(p) + 0.5 for p in contributing]
        pft_lnc = [30.0 - 3.0 * int(p) for p in contributing]
        self.assertGreaterEqual(first.trait_values[0], min(pft_sla) - 1e-9)
        self.assertLessEqual(first.trait_values[0], max(pft_sla) + 1e-9)
        self.assertGreaterEqual(first.trait_values[2], min(pft_lnc) - 1e-9)
        self.assertLessEqual(first.trait_values[2], max(pft_lnc) + 1e-9)


class TestBuildTrainingSet(unittest.TestCase):
    """Joining accepted pixels with features."""

    def setUp(self):
        self.geom = GridGeometry(3, 3, 10.0, 50.0, 0.5)
        rng = np.random.default_rng(7)
        pfts = list(CATEGORIES)
        self.records = [
            record(f"r{i:02d}", pfts[i % len(pfts)], float(rng.uniform(48.3, 50.2)),
                   float(rng.uniform(9.8, 11.7)), sla=float(rng.uniform(5, 30)),
                   ldmc=float(rng.uniform(0.1, 0.5)), lnc=float(rng.uniform(10, 40)))
            for i in range(20)]
        self.records.append(record("g_center", PftClass.GRL, 49.25, 10.75, sla=18.0))
        self.index = RecordIndex(TraitTable(self.records))
        fractions = rng.dirichlet(np.ones(7), size=9).T.reshape(7, 3, 3)
        self.abundance = AbundanceGrid(self.geom, fractions)
        self.features = constant_features(self.geom)

    def test_matches_exhaustive_oracle(self):
        """Every row equals an exhaustive recomputation of its pixel."""
        config = CwmConfig(max_km=60.0, k=3)
        training = build_training_set(self.abundance, self.features, self.index, config=config)
        expected = {}
        for pid in range(9):
            lon, lat = self.geom.pixel_center(pid // 3, pid % 3)
            values = brute_force_cwm((lat, lon), self.abundance.fractions[:, pid // 3, pid % 3],
                                     self.records, 60.0, 3)
            if values is not None:
                expected[pid] = values
        self.assertEqual(sorted(training.pixel_ids.tolist()), sorted(expected))
        for row, pid in enumerate(training.pixel_ids):
            np.testing.assert_allclose(training.Y[row], expected[int(pid)], rtol=1e-12)
            np.testing.assert_array_equal(training.X[row], self.features.matrix()[pid])
        self.assertEqual(len(training) + len(training.rejections), 9)

    def test_threads_match_serial(self):
        """Parallel pixel iteration gives the same rows."""
        serial = build_training_set(self.abundance, self.features, self.index)
        threaded = build_training_set(self.abundance, self.features, self.index, n_jobs=4)
        np.testing.assert_array_equal(serial.pixel_ids, threaded.pixel_ids)
        np.testing.assert_array_equal(serial.Y, threaded.Y)

    def test_empty_output(self):
        """Without nearby records the training set is empty but well formed."""
        far = RecordIndex(TraitTable([record("x", PftClass.GRL, -40.0, -60.0)]))
        with self.assertLogs("traitscale", level="WARNING"):
            training = build_training_set(self.abundance, self.features, far)
        self.assertTrue(training.empty)
        self.assertEqual(training.X.shape, (0, len(self.features.names)))
        self.assertEqual(training.Y.shape, (0, 5))
        self.assertEqual(len(training.rejections), 9)

    def test_single_pixel_passthrough(self):
        """One accepted pixel yields one row equal to its pixel CWM."""
        fractions = np.full((7, 3, 3), np.nan)
        fractions[:, 1, 1] = abundance_vector(GRL=1.0)
        abundance = AbundanceGrid(self.geom, fractions)
        training = build_training_set(abundance, self.features, self.index)
        self.assertEqual(training.pixel_ids.tolist(), [4])
        lon, lat = self.geom.pixel_center(1, 1)
        sample = pixel_cwm(4, (lat, lon), abundance_vector(GRL=1.0), self.index)
        self.assertEqual(tuple(training.Y[0]), sample.trait_values)
        self.assertEqual((training.lat[0], training.lon[0]), (lat, lon))

    def test_nodata_features_dropped(self):
        """Accepted pixels with a missing feature are dropped and counted."""
        bands = dict(self.features.bands)
        name = self.features.names[0]
        values = bands[name].values.copy()
        values[:] = bands[name].nodata
        bands[name] = bands[name].with_values(values)
        features = FeatureRaster(bands)
        accepted = len(build_training_set(self.abundance, self.features, self.index))
        with self.assertLogs("traitscale", level="WARNING"):
            training = build_training_set(self.abundance, features, self.index)
        self.assertTrue(training.empty)
        self.assertEqual(training.n_dropped, accepted)

    def test_climate_columns(self):
        """Climate grids on a finer grid are resampled and appended as bio1-bio19."""
        fine = GridGeometry(6, 6, 10.0, 50.0, 0.25)
        climate = {name: RasterGrid(fine, np.full((6, 6), float(i)), band_id=name)
                   for i, name in enumerate(BIOCLIM_COLUMNS)}
        training = build_training_set(self.abundance, self.features, self.index, climate)
        self.assertEqual(training.feature_names[-19:], BIOCLIM_COLUMNS)
        if not training.empty:
            np.testing.assert_allclose(training.X[:, -19:], np.tile(np.arange(19.0), (len(training), 1)))

    def test_missing_climate_band(self):
        """An incomplete climate set is rejected."""
        climate = {"bio1": RasterGrid(self.geom, np.zeros((3, 3)))}
        with self.assertRaises(CwmError):
            build_training_set(self.abundance, self.features, self.index, climate)

    def test_geometry_mismatch(self):
        """Features on another grid are rejected."""
        features = constant_features(GridGeometry(3, 3, 0.0, 50.0, 0.5))
        with self.assertRaises(GeometryMismatchError):
            build_training_set(self.abundance, features, self.index)


class TestCwmCsv(unittest.TestCase):
    """cwm.csv input and output."""

    def test_columns_and_reload(self):
        """The table carries the fixed columns in order and reloads the same arrays."""
        geom = GridGeometry(2, 2, 0.0, 1.0, 0.5)
        fractions = np.zeros((7, 2, 2))
        fractions[int(PftClass.GRL) - 1] = 1.0
        index = RecordIndex(TraitTable([record("g", PftClass.GRL, 0.5, 0.5, sla=12.25)]))
        training = build_training_set(AbundanceGrid(geom, fractions), constant_features(geom), index)
        with TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "cwm.csv")
            write_cwm_csv(training, path)
            with open(path) as f:
                header = f.readline().strip().split(",")
            loaded = read_cwm_csv(path)
        self.assertEqual(header[:3], ["pixel_id", "lat", "lon"])
        self.assertEqual(tuple(header[3:10]), ABUNDANCE_COLUMNS)
        self.assertEqual(header[10:16], ["represented_fraction", "sla", "ldmc", "lnc", "lpc", "lnpr"])
        self.assertEqual(loaded.feature_names, training.feature_names)
        np.testing.assert_array_equal(loaded.Y, training.Y)
        np.testing.assert_array_equal(loaded.X, training.X)
        self.assertEqual(loaded.dominant_pft().tolist(), [int(PftClass.GRL)] * 4)

    def test_missing_columns(self):
        """A table without the trait columns is rejected."""
        with TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "bad.csv")
            with open(path, "w") as f:
                f.write("pixel_id,lat,lon\n0,1,2\n")
            with self.assertRaises(CwmError):
                read_cwm_csv(path)


class TestCwmProcessor(unittest.TestCase):
    """The cwm stage."""

    def test_processor_writes_table(self):
        """The stage reads abundances, records and features and writes cwm.csv."""
        geom = GridGeometry(2, 2, 0.0, 1.0, 0.5)
        fractions = np.zeros((7, 2, 2))
        fractions[int(PftClass.DBF) - 1] = 1.0
        records = TraitTable([record("d1", PftClass.DBF, 0.5, 0.5, sla=14.0),
                              record("d2", PftClass.DBF, 0.6, 0.4, sla=16.0)])
        with TemporaryDirectory() as tmp:
            abundance = os.path.join(tmp, "abundance.tsr")
            write_abundance(AbundanceGrid(geom, fractions), abundance)
            records_path = os.path.join(tmp, "imputed.csv")
            save_trait_table(records, records_path)
            features = os.path.join(tmp, "features")
            write_feature_raster(constant_features(geom), features)
            climate = os.path.join(tmp, "climate")
            os.makedirs(climate)
            for i, name in enumerate(BIOCLIM_COLUMNS):
                write_tsr(RasterGrid(geom, np.full((2, 2), float(i)), band_id=name),
                          os.path.join(climate, f"{name}.tsr"))
            out = os.path.join(tmp, "cwm.csv")
            code = CwmProcessor(["--abundance", abundance, "--records", records_path,
                                 "--features", features, "--climate", climate, "--out", out,
                                 "--max-km", "100", "--k", "10"]).run()
            self.assertEqual(code, 0)
            loaded = read_cwm_csv(out)
        self.assertEqual(len(loaded), 4)
        np.testing.assert_allclose(loaded.Y[:, 0], 15.0)
        self.assertEqual(loaded.feature_names[-1], "bio19")

    def test_processor_failure(self):
        """A missing abundance file fails the stage."""
        with TemporaryDirectory() as tmp:
            with self.assertLogs("traitscale", level="ERROR"):
                code = CwmProcessor(["--abundance", os.path.join(tmp, "none.tsr"),
                                     "--records", os.path.join(tmp, "none.csv"),
                                     "--features", tmp, "--out", os.path.join(tmp, "o.csv")]).run()
        self.assertEqual(code, 1)


if __name__ == "__main__":
    unittest.main()
