#!/usr/bin/env python3
"""
Summary and plot data of a finished pipeline run.

``emit_report`` reads the run directory and writes ``summary.json`` plus one
CSV per figure: scatter pairs, per-PFT residual quartiles, per-PFT map
distributions, latitudinal means of the map and of the in-situ records, and
robustness curves when the evaluate stage ran. Nothing is rendered.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from logging_utils import get_logger
from pft_downscale import dominant_pft, read_abundance
from raster_features import RasterGrid, read_tsr
from stage_processor import StageProcessor
from trait_regress import (
    EvalReport,
    latitudinal_profile,
    pft_distribution,
    record_latitudinal_profile,
    residuals_by_pft,
    scatter_stats,
)
from trait_table import PftClass, Trait, TraitTableError, load_trait_table
from traitscale.config import ConfigError
from traitscale.layout import RunLayout
from traitscale.manifest import ManifestError, read_manifest
from traitscale.run_config import load_config
from validate_report import ReportValidationError, load_json_file, write_report

logger = get_logger("traitscale.report")

PathLike = Union[str, Path]

# Stages whose outputs the report reads; gapfill may have been skipped.
REQUIRED_STAGES = ("features", "classify", "cwm", "train", "predict")


class RunReportError(ValueError):
    """Raised when a run directory lacks the outputs a report needs."""


def _write_csv(rows: List[Dict], path: Path, columns: List[str]) -> None:
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, encoding="utf-8",
                                               lineterminator="\n", float_format="%.10g")


def _grid_stats(grid: RasterGrid) -> Dict[str, Optional[float]]:
    values = grid.masked()
    valid = np.isfinite(values)
    if not valid.any():
        return {"valid_pixels": 0, "mean": None, "min": None, "max": None}
    v = values[valid]
    return {"valid_pixels": int(valid.sum()), "mean": float(v.mean()), "min": float(v.min()),
            "max": float(v.max())}


def _pixel_latitudes(grid: RasterGrid) -> np.ndarray:
    return np.repeat(grid.geometry.row_centers()[:, None], grid.geometry.width, axis=1)


def _completed_manifest(layout: RunLayout):
    try:
        manifest = read_manifest(layout.manifest)
    except ManifestError as e:
        raise RunReportError(f"{layout.root} is not a run directory: {e}") from None
    missing = [s for s in REQUIRED_STAGES
               if manifest.stage(s) is None or manifest.stage(s).status != "ok"]
    if missing:
        raise RunReportError(f"{layout.root} is incomplete; stages {missing} did not finish")
    return manifest


def trait_plot_data(layout: RunLayout, trait: str, dominant: RasterGrid,
                    records, bin_deg: float) -> Dict:
    """Write the per-trait CSVs and return the trait's summary entry."""
    out = layout.report_dir
    report = EvalReport.model_validate(load_json_file(layout.eval_report(trait)))
    points = report.test_predictions
    _write_csv([p.model_dump() for p in points], out / f"scatter_{trait}.csv",
               ["sample_id", "observed", "predicted", "dominant_pft"])
    scatter = scatter_stats([p.predicted for p in points], [p.observed for p in points])

    grouped = [p for p in points if p.dominant_pft is not None]
    residuals = residuals_by_pft([p.predicted for p in grouped], [p.observed for p in grouped],
                                 [int(PftClass[p.dominant_pft]) for p in grouped])
    _write_csv([{"pft": name, **stats.model_dump()} for name, stats in residuals.items()],
               out / f"residuals_{trait}.csv", ["pft", "n", "me", "rmse", "q25", "q50", "q75"])

    trait_map = read_tsr(layout.trait_map(trait))
    distribution = pft_distribution(trait_map.masked(), dominant.masked())
    _write_csv([{"pft": name, **stats.model_dump()} for name, stats in distribution.items()],
               out / f"distribution_{trait}.csv",
               ["pft", "n", "mean", "min", "q25", "median", "q75", "max"])

    profile = latitudinal_profile(trait_map.masked(), _pixel_latitudes(trait_map), bin_deg)
    _write_csv([b.model_dump() for b in profile], out / f"latitude_{trait}.csv",
               ["lat_min", "lat_max", "mean", "count"])
    record_profile = record_latitudinal_profile(records, Trait(trait), bin_deg)
    _write_csv([b.model_dump() for b in record_profile], out / f"latitude_records_{trait}.csv",
               ["lat_min", "lat_max", "mean", "count"])

    stderr_map = read_tsr(layout.stderr_map(trait))
    stderr = _grid_stats(stderr_map)
    return {"method": report.method, "n": report.n, "realizations": report.realizations,
            "me_mean": report.me_mean, "rmse_mean": report.rmse_mean,
            "rmse_std": report.rmse_std, "r_mean": report.r_mean, "r_std": report.r_std,
            "scatter": scatter.model_dump(), "residual_groups": sorted(residuals),
            "map": _grid_stats(trait_map),
            "stderr": stderr if stderr["valid_pixels"] else None}


def robustness_plot_data(layout: RunLayout, trait: str) -> Optional[List[Dict]]:
    """Write ``robustness_<trait>.csv`` from a method comparison, if one exists."""
    path = layout.comparison(trait)
    if not path.is_file():
        return None
    comparison = load_json_file(path)
    rows = [{"method": method, **point}
            for method, curve in comparison["robustness"].items() for point in curve]
    _write_csv(rows, layout.report_dir / f"robustness_{trait}.csv",
               ["method", "fraction", "n_train", "r_mean", "r_std", "rmse_mean", "rmse_std"])
    return comparison["methods"]


def emit_report(run_dir: PathLike, bin_deg: float = 1.0) -> Dict:
    """Write ``report/summary.json`` and the plot-data CSVs of a run.

    Raises:
        RunReportError: If the run did not finish the stages the report reads.
    """
    layout = RunLayout(Path(run_dir))
    manifest = _completed_manifest(layout)
    config = load_config(layout.config)
    layout.report_dir.mkdir(parents=True, exist_ok=True)

    dominant = dominant_pft(read_abundance(layout.abundance))
    records = load_trait_table(config.inputs.records)
    traits = {}
    comparisons = {}
    for trait in config.train.traits:
        traits[trait] = trait_plot_data(layout, trait, dominant, records, bin_deg)
        methods = robustness_plot_data(layout, trait)
        if methods is not None:
            comparisons[trait] = methods

    classification = load_json_file(layout.classification_report)["validation"]
    gapfill = None
    if layout.gapfill_report.is_file():
        gapfill = [{"trait": r["trait"], "me": r["me"], "rmse": r["rmse"], "r": r["r"],
                    "n_imputed": r["n_imputed"]}
                   for r in load_json_file(layout.gapfill_report)["reports"]]
    summary = {
        "seed": manifest.seed, "n_jobs": manifest.n_jobs, "config_hash": manifest.config_hash,
        "bin_deg": bin_deg,
        "classification": {"overall_accuracy": classification["overall_accuracy"],
                           "kappa": classification["kappa"]},
        "gapfill": gapfill,
        "traits": traits,
        "comparisons": comparisons,
    }
    summary["files"] = sorted(p.name for p in layout.report_dir.glob("*.csv"))
    write_report(summary, layout.report_dir / "summary.json", "report_summary")
    logger.info(f"Report of {len(traits)} traits written to {layout.report_dir}")
    return summary


class ReportProcessor(StageProcessor):
    """Processor for the report stage."""

    stage_name = "report"
    handled_errors = (RunReportError, ConfigError, ReportValidationError, TraitTableError,
                      json.JSONDecodeError)

    def get_description(self) -> str:
        return "Write the summary and plot data of a finished run"

    def add_arguments(self, parser) -> None:
        parser.add_argument("--run", required=True, help="Run directory")
        parser.add_argument("--bin-deg", type=float, default=1.0,
                            help="Latitude bin width in degrees (default: 1.0)")

    def execute(self, args: argparse.Namespace) -> None:
        if not args.bin_deg > 0:
            raise RunReportError(f"--bin-deg must be positive, got {args.bin_deg}")
        emit_report(args.run, args.bin_deg)


def main() -> int:
    """Run the report stage.

    Returns:
        Exit code (0 for success, non-zero for failure).
    """
    return ReportProcessor().run()


__all__ = [
    "REQUIRED_STAGES", "ReportProcessor", "RunReportError", "emit_report", "main",
    "robustness_plot_data", "trait_plot_data",
]


if __name__ == "__main__":
    sys.exit(main())
