"""Tests for the run_report package."""

import json
import os
import shutil
import unittest
from tempfile import TemporaryDirectory, mkdtemp

import numpy as np
import pandas as pd

from raster_features import read_tsr
from run_report import ReportProcessor, RunReportError, emit_report
from synthetic_world import SynthConfig, synth_world, write_world
from traitscale.layout import RunLayout
from traitscale.main import run_pipeline
from traitscale.run_config import world_pipeline_config

SECTIONS = {
    "gapfill": {"enabled": False},
    "classify": {"per_class": 20, "threshold": 0.5, "n_trees": 10},
    "cwm": {"k": 5},
    "train": {"realizations": 2, "traits": ["sla", "lnc"]},
    "evaluate": {"enabled": True, "traits": ["sla"], "methods": ["rlr", "rf"],
                 "realizations": 2, "fractions": [0.4, 0.8]},
    "report": {"enabled": False},
}


class TestEmitReport(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmp = mkdtemp()
        world = synth_world(SynthConfig(width=32, height=32, smoothing=3.0, n_records=300,
                                        species_per_pft=4, missingness={}), seed=3)
        config = world_pipeline_config(write_world(world, os.path.join(cls.tmp, "world")),
                                       **SECTIONS)
        cls.run_dir = os.path.join(cls.tmp, "run")
        run_pipeline(config, cls.run_dir)
        cls.layout = RunLayout(cls.run_dir)
        cls.summary = emit_report(cls.run_dir, bin_deg=0.05)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)

    def read(self, name):
        return pd.read_csv(self.layout.report_dir / name)

    def test_files_written(self):
        """Every plot-data file is written and listed in the summary"""
        expected = {f"{kind}_{trait}.csv" for trait in ("sla", "lnc")
                    for kind in ("scatter", "residuals", "distribution", "latitude",
                                 "latitude_records")} | {"robustness_sla.csv"}
        self.assertEqual(set(self.summary["files"]), expected)
        with open(self.layout.report_dir / "summary.json", "rt", encoding="utf-8") as f:
            self.assertEqual(json.load(f), self.summary)

    def test_scatter_rows_match_test_set(self):
        """The scatter file holds one row per test-set prediction"""
        with open(self.layout.eval_report("sla"), "rt", encoding="utf-8") as f:
            report = json.load(f)
        scatter = self.read("scatter_sla.csv")
        self.assertEqual(len(scatter), len(report["test_predictions"]))
        self.assertEqual(self.summary["traits"]["sla"]["scatter"]["n"], len(scatter))

    def test_latitude_bins_cover_valid_pixels(self):
        """Map latitude bins span exactly the latitudes of the valid pixels"""
        trait_map = read_tsr(self.layout.trait_map("sla"))
        lats = np.repeat(trait_map.geometry.row_centers()[:, None], trait_map.geometry.width, 1)
        valid_lats = lats[trait_map.valid]
        profile = self.read("latitude_sla.csv")
        self.assertGreater(len(profile), 1)
        self.assertLessEqual(profile["lat_min"].min(), valid_lats.min() + 1e-9)
        self.assertGreaterEqual(profile["lat_max"].max(), valid_lats.max() - 1e-9)
        self.assertLess(valid_lats.min() - profile["lat_min"].min(), 0.05)
        self.assertLess(profile["lat_max"].max() - valid_lats.max(), 0.05 + 1e-9)
        self.assertEqual(profile["count"].sum(), trait_map.valid.sum())

    def test_residual_groups_match_dominant_pfts(self):
        """Residual groups are the dominant PFTs present in the test set"""
        scatter = self.read("scatter_sla.csv")
        residuals = self.read("residuals_sla.csv")
        self.assertEqual(sorted(residuals["pft"]), sorted(set(scatter["dominant_pft"])))
        self.assertEqual(residuals["n"].sum(), len(scatter))
        self.assertEqual(self.summary["traits"]["sla"]["residual_groups"],
                         sorted(residuals["pft"]))

    def test_robustness_curves(self):
        """Robustness rows cover every compared method and fraction"""
        curve = self.read("robustness_sla.csv")
        self.assertEqual(sorted(set(curve["method"])), ["rf", "rlr"])
        self.assertEqual(sorted(set(curve["fraction"])), [0.4, 0.8])
        self.assertEqual(len(self.summary["comparisons"]["sla"]), 2)

    def test_summary_contents(self):
        """The summary carries the forest stderr and skips the absent gap-fill report"""
        sla = self.summary["traits"]["sla"]
        self.assertEqual(sla["method"], "rf")
        self.assertIsNotNone(sla["stderr"])
        self.assertGreaterEqual(sla["stderr"]["min"], 0.0)
        self.assertIsNone(self.summary["gapfill"])
        self.assertEqual(self.summary["bin_deg"], 0.05)

    def test_processor(self):
        """The report command rewrites the same summary"""
        self.assertEqual(ReportProcessor(["--run", self.run_dir, "--bin-deg", "0.05"]).run(), 0)
        with open(self.layout.report_dir / "summary.json", "rt", encoding="utf-8") as f:
            self.assertEqual(json.load(f), self.summary)


class TestIncompleteRun(unittest.TestCase):

    def test_not_a_run(self):
        """A directory without a manifest is rejected"""
        with TemporaryDirectory() as tmp:
            with self.assertRaises(RunReportError):
                emit_report(tmp)

    def test_unfinished_stages(self):
        """A manifest missing required stages is rejected"""
        with TemporaryDirectory() as tmp:
            manifest = {"format_version": 1, "traitscale_version": "0.1.0", "packages": {},
                        "seed": 0, "n_jobs": 1, "config_hash": "0" * 64, "complete": False,
                        "failed_stage": "classify",
                        "stages": [{"name": "features", "status": "ok",
                                    "parameters_hash": "1" * 64, "seconds": 0.5,
                                    "outputs": [], "error": None}]}
            with open(os.path.join(tmp, "manifest.json"), "wt", encoding="utf-8") as f:
                json.dump(manifest, f)
            with self.assertRaises(RunReportError) as caught:
                emit_report(tmp)
            self.assertIn("classify", str(caught.exception))
            with self.assertLogs("traitscale", level="ERROR"):
                self.assertEqual(ReportProcessor(["--run", tmp]).run(), 1)


if __name__ == "__main__":
    unittest.main()
