"""Tests for the CLI module."""

import os
import unittest
from tempfile import TemporaryDirectory

from stage_processor import StageProcessor
from traitscale.cli import PROCESSOR_MAP, get_processor_instance, main, parse_args


class TestCli(unittest.TestCase):
    """Tests for the CLI functions."""

    def test_every_command_loads(self):
        """Every registered command resolves to a stage processor"""
        for cmd in PROCESSOR_MAP:
            with self.subTest(cmd=cmd):
                processor = get_processor_instance(cmd)
                self.assertIsInstance(processor, StageProcessor)
                self.assertEqual(processor.stage_name, cmd)

    def test_unknown_command(self):
        """Unknown or missing commands resolve to no processor"""
        self.assertIsNone(get_processor_instance("explain_code"))
        self.assertIsNone(get_processor_instance(None))

    def test_parse_processor_arguments(self):
        """Processor arguments and common arguments are parsed together"""
        args, processor = parse_args(["cwm", "--abundance", "a.tsr", "--records", "r.csv",
                                      "--features", "f", "--out", "cwm.csv", "--k", "4",
                                      "--seed", "9", "--n-jobs", "2"])
        self.assertEqual(args.command, "cwm")
        self.assertEqual(processor.stage_name, "cwm")
        self.assertEqual((args.k, args.seed, args.n_jobs), (4, 9, 2))
        self.assertEqual(args.max_km, 100.0)
        self.assertFalse(args.debug)

    def test_parse_defaults(self):
        """Train defaults to the forest method"""
        args, _ = parse_args(["train", "--cwm", "c.csv", "--trait", "sla", "--out", "m.json",
                              "--report", "r.json"])
        self.assertEqual(args.method, "rf")

    def test_missing_required_argument(self):
        """A missing required processor argument exits with a usage error"""
        with self.assertRaises(SystemExit):
            parse_args(["predict", "--model", "m.json"])

    def test_invalid_command(self):
        """An unregistered command exits with a usage error"""
        with self.assertRaises(SystemExit):
            parse_args(["explain_code"])

    def test_main_runs_processor(self):
        """main dispatches to the processor and returns its exit code"""
        with TemporaryDirectory() as tmp:
            config = os.path.join(tmp, "synth.yaml")
            with open(config, "wt", encoding="utf-8") as f:
                f.write("width: 16\nheight: 16\nsmoothing: 1.0\nn_records: 20\n"
                        "species_per_pft: 2\n")
            out = os.path.join(tmp, "world")
            self.assertEqual(main(["synth", "--out", out, "--config", config]), 0)
            self.assertTrue(os.path.isfile(os.path.join(out, "records.csv")))

    def test_main_reports_failure(self):
        """A failing stage gives exit code 1"""
        with TemporaryDirectory() as tmp:
            with self.assertLogs("traitscale", level="ERROR"):
                code = main(["verify", "--run", tmp])
        self.assertEqual(code, 1)


if __name__ == "__main__":
    unittest.main()
