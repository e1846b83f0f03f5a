#!/usr/bin/env python3
"""
Raster grids, the TSR container, temporal compositing and annual feature bands.

The ``features`` stage turns a directory of dated scenes with QA masks into a
feature raster directory holding one TSR per band.
"""

import argparse
import sys

from raster_features.composite import (
    DEFAULT_BLOCK_ROWS,
    Scene,
    TimeStack,
    VegetationIndex,
    annual_summary,
    bilinear_resample,
    block_mean,
    map_row_blocks,
    mode_composite,
    monthly_median_composite,
    vegetation_index,
)
from raster_features.features import (
    DEFAULT_REFLECTANCE,
    BandRoles,
    FeatureRaster,
    FeaturesConfig,
    FeatureStats,
    build_feature_raster,
    feature_band_names,
    load_features_config,
    load_time_stack,
    read_feature_raster,
    standardize_features,
    write_feature_raster,
)
from raster_features.grid import (
    DEFAULT_NODATA,
    GeometryMismatchError,
    GridGeometry,
    RasterError,
    RasterGrid,
    require_same_geometry,
)
from raster_features.tsr import (
    TsrHeader,
    qa_path,
    read_tsr,
    read_tsr_bands,
    read_tsr_header,
    write_tsr,
    write_tsr_bands,
)
from stage_processor import StageProcessor
from traitscale.config import ConfigError

__all__ = [
    "DEFAULT_BLOCK_ROWS", "DEFAULT_NODATA", "DEFAULT_REFLECTANCE", "BandRoles",
    "FeatureRaster", "FeaturesConfig", "FeatureStats", "FeaturesProcessor",
    "GeometryMismatchError", "GridGeometry", "RasterError", "RasterGrid", "Scene",
    "TimeStack", "TsrHeader", "VegetationIndex", "annual_summary", "bilinear_resample",
    "block_mean", "build_feature_raster", "feature_band_names", "load_features_config",
    "load_time_stack", "map_row_blocks", "mode_composite", "monthly_median_composite",
    "qa_path", "read_feature_raster", "read_tsr", "read_tsr_bands", "read_tsr_header",
    "require_same_geometry", "standardize_features", "vegetation_index",
    "write_feature_raster", "write_tsr", "write_tsr_bands",
]


class FeaturesProcessor(StageProcessor):
    """Processor for the features stage."""

    stage_name = "features"
    handled_errors = (RasterError, ConfigError)

    def get_description(self) -> str:
        return "Composite a scene time stack into annual feature bands"

    def add_arguments(self, parser) -> None:
        parser.add_argument("--config", required=True, help="Features YAML config")

    def execute(self, args: argparse.Namespace) -> None:
        config = load_features_config(args.config)
        stack = load_time_stack(config.scenes)
        elevation = read_tsr(config.elevation) if config.elevation else None
        features = build_feature_raster(stack, config.roles, config.years, elevation,
                                        config.lst_band, args.n_jobs, config.block_rows)
        write_feature_raster(features, config.out)


def main() -> int:
    """Run the features stage.

    Returns:
        Exit code (0 for success, non-zero for failure).
    """
    return FeaturesProcessor().run()


if __name__ == "__main__":
    sys.exit(main())
