#!/usr/bin/env python3
"""
Community-weighted-mean (CWM) trait values for coarse pixels.

For every vegetated PFT composing a pixel, the nearest in-situ records of that
PFT are averaged; the per-PFT means are then weighted by abundance. Pixels
whose represented abundance is not more than half of the vegetated abundance
are rejected.
"""

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from cwm.neighbors import (
    DEFAULT_K,
    DEFAULT_MAX_KM,
    EARTH_RADIUS_KM,
    Neighbor,
    RecordIndex,
    bounding_box,
    haversine_km,
    neighbor_select,
)
from logging_utils import get_logger
from pft_downscale import AbundanceGrid, read_abundance
from raster_features import (
    FeatureRaster,
    GeometryMismatchError,
    GridGeometry,
    RasterError,
    RasterGrid,
    bilinear_resample,
    read_feature_raster,
    read_tsr,
)
from stage_processor import StageProcessor
from trait_table import (
    BIOCLIM_COLUMNS,
    TRAITS,
    VEGETATED_PFTS,
    PftClass,
    TraitTableError,
    load_trait_table,
)

logger = get_logger("traitscale.cwm")

PathLike = Union[str, Path]

DEFAULT_MIN_REPRESENTED = 0.5
ABUNDANCE_COLUMNS: Tuple[str, ...] = tuple(p.name for p in PftClass)
TRAIT_COLUMNS: Tuple[str, ...] = tuple(t.value for t in TRAITS)
META_COLUMNS: Tuple[str, ...] = ("pixel_id", "lat", "lon")


class CwmError(ValueError):
    """Raised for malformed CWM inputs or tables."""


class CwmConfig(BaseModel):
    """Neighbour and representativeness rules."""
    max_km: float = Field(DEFAULT_MAX_KM, gt=0, description="Maximum record distance (km)")
    k: int = Field(DEFAULT_K, ge=1, description="Records kept per PFT")
    min_represented: float = Field(DEFAULT_MIN_REPRESENTED, ge=0.0, lt=1.0,
                                   description="Represented fraction must exceed this")


@dataclass(frozen=True)
class CwmSample:
    pixel_id: int
    center_lat: float
    center_lon: float
    abundance: Tuple[float, ...]
    trait_values: Tuple[float, ...]
    represented_fraction: float
    contributing_records: Dict[PftClass, List[Tuple[str, float]]] = field(default_factory=dict)


@dataclass(frozen=True)
class CwmRejection:
    pixel_id: int
    represented_fraction: float
    reason: str


def pixel_cwm(pixel_id: int, center: Tuple[float, float], abundance: Sequence[float],
              index: RecordIndex, config: CwmConfig = CwmConfig()
              ) -> Union[CwmSample, CwmRejection]:
    """CWM of one pixel, or the reason it was rejected.

    Args:
        pixel_id: Row-major index of the pixel on the coarse grid.
        center: (lat, lon) of the pixel center in degrees.
        abundance: One fraction per ``PftClass``, in class order.
        index: Records to draw from.
        config: Neighbour and representativeness rules.
    """
    fractions = np.asarray(abundance, dtype=float)
    if fractions.shape != (len(PftClass),) or not np.isfinite(fractions).all():
        return CwmRejection(pixel_id, 0.0, "no valid abundance")
    vegetated = float(sum(fractions[int(p) - 1] for p in VEGETATED_PFTS))
    if vegetated <= 0:
        return CwmRejection(pixel_id, 0.0, "no vegetation")

    weights: List[float] = []
    means: List[np.ndarray] = []
    contributing: Dict[PftClass, List[Tuple[str, float]]] = {}
    for pft in VEGETATED_PFTS:
        weight = fractions[int(pft) - 1]
        if weight <= 0:
            continue
        selected = neighbor_select(center, index, pft, config.max_km, config.k)
        if not selected:
            continue
        contributing[pft] = [(n.record_id, n.distance_km) for n in selected]
        means.append(np.mean([n.traits for n in selected], axis=0))
        weights.append(weight)

    represented = float(sum(weights)) / vegetated
    if represented <= config.min_represented:
        return CwmRejection(pixel_id, represented,
                            f"represented fraction {represented:.3f} <= {config.min_represented}")
    w = np.asarray(weights)
    values = (w[:, None] * np.vstack(means)).sum(axis=0) / w.sum()
    return CwmSample(pixel_id, float(center[0]), float(center[1]), tuple(fractions.tolist()),
                     tuple(values.tolist()), represented, contributing)


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """One row per accepted pixel with complete features."""
    pixel_ids: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    abundance: np.ndarray
    represented: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    feature_names: Tuple[str, ...]
    samples: Tuple[CwmSample, ...] = ()
    rejections: Tuple[CwmRejection, ...] = ()
    n_dropped: int = 0

    def __len__(self) -> int:
        return int(self.pixel_ids.size)

    @property
    def empty(self) -> bool:
        return len(self) == 0

    def dominant_pft(self) -> np.ndarray:
        """Class code with the largest abundance per row, ties to the lowest code."""
        codes = np.array([int(p) for p in PftClass])
        if self.empty:
            return np.empty(0, dtype=int)
        return codes[np.argmax(self.abundance, axis=1)]


def align_climate(climate: Mapping[str, RasterGrid], geometry: GridGeometry,
                  n_jobs: int = 1) -> Dict[str, RasterGrid]:
    """Bilinear-resample climate grids that are not already on ``geometry``."""
    aligned = {}
    for name in BIOCLIM_COLUMNS:
        if name not in climate:
            raise CwmError(f"climate raster {name} is missing")
        grid = climate[name]
        aligned[name] = grid if grid.geometry == geometry else bilinear_resample(grid, geometry, n_jobs)
    return aligned


def read_climate_rasters(directory: PathLike) -> Dict[str, RasterGrid]:
    """Load ``bio1.tsr`` ... ``bio19.tsr`` from a directory."""
    directory = Path(directory)
    missing = [name for name in BIOCLIM_COLUMNS if not (directory / f"{name}.tsr").is_file()]
    if missing:
        raise CwmError(f"{directory}: missing climate rasters {missing}")
    return {name: read_tsr(directory / f"{name}.tsr") for name in BIOCLIM_COLUMNS}


def _map_pixels(func, jobs: Sequence, n_jobs: int) -> List:
    if n_jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(func, jobs))
    return [func(job) for job in jobs]


def build_training_set(abundance: AbundanceGrid, features: FeatureRaster, index: RecordIndex,
                       climate: Optional[Mapping[str, RasterGrid]] = None,
                       config: CwmConfig = CwmConfig(), n_jobs: int = 1) -> TrainingSet:
    """Accepted pixels joined with their feature values.

    Features are the feature raster bands followed by BIO1-BIO19 when climate
    grids are given. Rows with any missing feature are dropped and counted.

    Raises:
        GeometryMismatchError: If the feature raster is not on the abundance grid.
    """
    geometry = abundance.geometry
    if features.geometry != geometry:
        raise GeometryMismatchError(f"features {features.geometry} do not match abundance "
                                    f"grid {geometry}")
    names = list(features.names)
    columns = [features.matrix()]
    if climate is not None:
        aligned = align_climate(climate, geometry, n_jobs)
        names += list(BIOCLIM_COLUMNS)
        columns.append(np.column_stack([aligned[n].masked().ravel() for n in BIOCLIM_COLUMNS]))
    matrix = np.hstack(columns)

    fractions = abundance.fractions.reshape(len(abundance.classes), -1).T
    order = [abundance.classes.index(p) for p in PftClass]
    fractions = fractions[:, order]
    pixel_ids = np.flatnonzero(abundance.valid.ravel())
    width = geometry.width

    def one(pixel_id: int) -> Union[CwmSample, CwmRejection]:
        lon, lat = geometry.pixel_center(pixel_id // width, pixel_id % width)
        return pixel_cwm(int(pixel_id), (lat, lon), fractions[pixel_id], index, config)

    outcomes = _map_pixels(one, list(pixel_ids), n_jobs)
    samples = [o for o in outcomes if isinstance(o, CwmSample)]
    rejections = tuple(o for o in outcomes if isinstance(o, CwmRejection))

    rows = np.array([s.pixel_id for s in samples], dtype=int)
    X = matrix[rows] if rows.size else np.empty((0, len(names)))
    complete = np.isfinite(X).all(axis=1)
    n_dropped = int((~complete).sum())
    kept = [s for s, ok in zip(samples, complete) if ok]

    logger.info(f"CWM: {len(pixel_ids)} pixels, {len(samples)} accepted, "
                f"{len(rejections)} rejected")
    if n_dropped:
        logger.warning(f"Dropped {n_dropped} accepted pixel(s) with missing features")
    if not kept:
        logger.warning("No CWM samples; training set is empty")
    return TrainingSet(
        pixel_ids=np.array([s.pixel_id for s in kept], dtype=int),
        lat=np.array([s.center_lat for s in kept], dtype=float),
        lon=np.array([s.center_lon for s in kept], dtype=float),
        abundance=np.array([s.abundance for s in kept], dtype=float).reshape(-1, len(PftClass)),
        represented=np.array([s.represented_fraction for s in kept], dtype=float),
        X=X[complete], Y=np.array([s.trait_values for s in kept], dtype=float).reshape(-1, len(TRAITS)),
        feature_names=tuple(names), samples=tuple(kept), rejections=rejections,
        n_dropped=n_dropped)


def write_cwm_csv(training: TrainingSet, path: PathLike) -> None:
    frame = pd.DataFrame({"pixel_id": training.pixel_ids, "lat": training.lat, "lon": training.lon})
    for i, name in enumerate(ABUNDANCE_COLUMNS):
        frame[name] = training.abundance[:, i]
    frame["represented_fraction"] = training.represented
    for i, name in enumerate(TRAIT_COLUMNS):
        frame[name] = training.Y[:, i]
    for i, name in enumerate(training.feature_names):
        frame[name] = training.X[:, i]
    frame.to_csv(path, index=False, float_format="%.17g")


def read_cwm_csv(path: PathLike) -> TrainingSet:
    """Load a table written by ``write_cwm_csv``.

    Raises:
        CwmError: If a required column is missing or a value is not numeric.
    """
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise CwmError(f"{path}: empty CWM table") from None
    fixed = META_COLUMNS + ABUNDANCE_COLUMNS + ("represented_fraction",) + TRAIT_COLUMNS
    missing = [c for c in fixed if c not in frame.columns]
    if missing:
        raise CwmError(f"{path}: missing columns {missing}")
    feature_names = tuple(c for c in frame.columns if c not in fixed)
    try:
        numeric = frame.astype(float)
    except ValueError as e:
        raise CwmError(f"{path}: {e}") from None
    return TrainingSet(
        pixel_ids=frame["pixel_id"].to_numpy(dtype=int),
        lat=numeric["lat"].to_numpy(), lon=numeric["lon"].to_numpy(),
        abundance=numeric[list(ABUNDANCE_COLUMNS)].to_numpy(),
        represented=numeric["represented_fraction"].to_numpy(),
        X=numeric[list(feature_names)].to_numpy().reshape(len(frame), len(feature_names)),
        Y=numeric[list(TRAIT_COLUMNS)].to_numpy(), feature_names=feature_names)


class CwmProcessor(StageProcessor):
    """Processor for the cwm stage."""

    stage_name = "cwm"
    handled_errors = (CwmError, RasterError, TraitTableError)

    def get_description(self) -> str:
        return "Build community-weighted-mean training samples from abundances and records"

    def add_arguments(self, parser) -> None:
        parser.add_argument("--abundance", required=True, help="Coarse PFT abundance TSR")
        parser.add_argument("--records", required=True, help="Imputed trait table CSV")
        parser.add_argument("--features", required=True,
                            help="Feature raster directory on the abundance grid")
        parser.add_argument("--climate", help="Directory of bio1.tsr ... bio19.tsr")
        parser.add_argument("--out", required=True, help="Output cwm.csv")
        parser.add_argument("--max-km", type=float, default=DEFAULT_MAX_KM,
                            help=f"Maximum record distance in km (default: {DEFAULT_MAX_KM})")
        parser.add_argument("--k", type=int, default=DEFAULT_K,
                            help=f"Records per PFT (default: {DEFAULT_K})")

    def execute(self, args: argparse.Namespace) -> None:
        if args.max_km <= 0 or args.k < 1:
            raise CwmError(f"--max-km must be positive and --k at least 1, got {args.max_km}, {args.k}")
        abundance = read_abundance(args.abundance)
        features = read_feature_raster(args.features)
        climate = read_climate_rasters(args.climate) if args.climate else None
        index = RecordIndex(load_trait_table(args.records))
        training = build_training_set(abundance, features, index, climate,
                                      CwmConfig(max_km=args.max_km, k=args.k), args.n_jobs)
        write_cwm_csv(training, args.out)
        logger.info(f"Wrote {len(training)} CWM rows to {args.out}")


def main() -> int:
    """Run the cwm stage.

    Returns:
        Exit code (0 for success, non-zero for failure).
    """
    return CwmProcessor().run()


__all__ = [
    "ABUNDANCE_COLUMNS", "DEFAULT_K", "DEFAULT_MAX_KM", "DEFAULT_MIN_REPRESENTED",
    "EARTH_RADIUS_KM", "TRAIT_COLUMNS", "CwmConfig", "CwmError", "CwmProcessor", "CwmRejection",
    "CwmSample", "Neighbor", "RecordIndex", "TrainingSet", "align_climate", "bounding_box",
    "build_training_set", "haversine_km", "main", "neighbor_select", "pixel_cwm",
    "read_climate_rasters", "read_cwm_csv", "write_cwm_csv",
]


if __name__ == "__main__":
    sys.exit(main())
