"""Annual feature rasters, their on-disk layout and feature standardization."""

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from logging_utils import get_logger
from raster_features.composite import (
    DEFAULT_BLOCK_ROWS,
    Scene,
    TimeStack,
    VegetationIndex,
    annual_summary,
    monthly_median_composite,
    vegetation_index,
)
from raster_features.grid import (
    GeometryMismatchError,
    GridGeometry,
    RasterError,
    RasterGrid,
    require_same_geometry,
)
from raster_features.tsr import qa_path, read_tsr, write_tsr
from traitscale.config import ConfigError

logger = get_logger("traitscale.raster")

PathLike = Union[str, Path]

DEFAULT_REFLECTANCE = ("B1", "B2", "B3", "B4", "B5", "B6", "B7")
SUMMARY_STATS = ("max", "min", "std", "sum")
FEATURE_INDEX = "features.json"


class BandRoles(BaseModel):
    """Which scene bands act as reflectance features and as index inputs.

    Defaults follow the MODIS band order (red B1, nir B2, blue B3, swir B5).
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    reflectance: Tuple[str, ...] = DEFAULT_REFLECTANCE
    red: str = "B1"
    nir: str = "B2"
    blue: str = "B3"
    swir: str = "B5"


def feature_band_names(reflectance: Sequence[str] = DEFAULT_REFLECTANCE,
                       lst_supplied: bool = False, elevation_supplied: bool = False) -> List[str]:
    """Ordered band schema of a feature raster."""
    names = [f"{band}med" for band in reflectance]
    if lst_supplied:
        names.append("LSTmed")
    names += [f"{vi.value}{stat}" for vi in VegetationIndex for stat in SUMMARY_STATS]
    if lst_supplied:
        names += [f"LST{stat}" for stat in SUMMARY_STATS]
    if elevation_supplied:
        names.append("Elevation")
    return names


@dataclass(frozen=True, eq=False)
class FeatureRaster:
    bands: Dict[str, RasterGrid]
    reflectance: Tuple[str, ...] = DEFAULT_REFLECTANCE
    lst_supplied: bool = False
    elevation_supplied: bool = False

    def __post_init__(self):
        expected = feature_band_names(self.reflectance, self.lst_supplied, self.elevation_supplied)
        if sorted(self.bands) != sorted(expected):
            raise RasterError(f"feature bands {sorted(self.bands)} do not match schema {expected}")
        object.__setattr__(self, "bands", {name: self.bands[name] for name in expected})
        require_same_geometry(list(self.bands.values()))

    @property
    def names(self) -> List[str]:
        return list(self.bands)

    @property
    def geometry(self) -> GridGeometry:
        return next(iter(self.bands.values())).geometry

    def matrix(self, names: Optional[Sequence[str]] = None) -> np.ndarray:
        """Pixel-by-band matrix in row-major pixel order, NaN where invalid."""
        names = self.names if names is None else list(names)
        return np.column_stack([self.bands[n].masked().ravel() for n in names])


def _median_over_months(monthlies: Sequence[RasterGrid], name: str) -> RasterGrid:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        values = np.nanmedian(np.stack([g.masked() for g in monthlies]), axis=0)
    return RasterGrid.from_masked(monthlies[0].geometry, values, monthlies[0].nodata, name)


def _summary_bands(monthlies: Sequence[RasterGrid], stem: str) -> Dict[str, RasterGrid]:
    return {f"{stem}{stat}": grid.with_values(grid.masked(), f"{stem}{stat}")
            for stat, grid in zip(SUMMARY_STATS, annual_summary(monthlies))}


def build_feature_raster(stack: TimeStack, roles: Optional[BandRoles] = None,
                         years: Optional[Tuple[int, int]] = None,
                         elevation: Optional[RasterGrid] = None,
                         lst_band: Optional[str] = None, n_jobs: int = 1,
                         block_rows: int = DEFAULT_BLOCK_ROWS) -> FeatureRaster:
    """Feature raster of one typical year from a multi-year time stack.

    Reflectance bands yield the median of their monthly median composites, the
    vegetation indices and LST their annual max, min, std and sum.

    Raises:
        RasterError: If a band named in ``roles`` has no scenes.
        GeometryMismatchError: If ``elevation`` is on another grid.
    """
    roles = roles or BandRoles()
    needed = sorted(set(roles.reflectance) | {roles.red, roles.nir, roles.blue, roles.swir})
    logger.info(f"Building features from {len(stack.scenes)} scenes, bands {needed}, years {years}")
    monthly = {band: monthly_median_composite(stack, band, years, n_jobs, block_rows)
               for band in needed}

    bands: Dict[str, RasterGrid] = {}
    for band in roles.reflectance:
        bands[f"{band}med"] = _median_over_months(monthly[band], f"{band}med")
    for vi in VegetationIndex:
        vi_months = [vegetation_index(red=monthly[roles.red][m], nir=monthly[roles.nir][m],
                                      blue=monthly[roles.blue][m], swir=monthly[roles.swir][m],
                                      which=vi)
                     for m in range(12)]
        bands.update(_summary_bands(vi_months, vi.value))
    if lst_band is not None:
        lst_months = monthly_median_composite(stack, lst_band, years, n_jobs, block_rows)
        bands["LSTmed"] = _median_over_months(lst_months, "LSTmed")
        bands.update(_summary_bands(lst_months, "LST"))
    else:
        logger.info("No LST band supplied; LST features omitted")
    if elevation is not None:
        if elevation.geometry != stack.geometry:
            raise GeometryMismatchError("elevation raster is not on the scene grid")
        bands["Elevation"] = elevation.with_values(elevation.masked(), "Elevation")

    return FeatureRaster(bands, tuple(roles.reflectance), lst_band is not None,
                         elevation is not None)


class FeatureIndex(BaseModel):
    """Contents of ``features.json`` in a feature raster directory."""
    bands: List[str]
    reflectance: List[str]
    lst_supplied: bool
    elevation_supplied: bool


def write_feature_raster(features: FeatureRaster, directory: PathLike) -> Path:
    """Write one ``<band>.tsr`` per feature band plus the ``features.json`` index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, grid in features.bands.items():
        write_tsr(grid, directory / f"{name}.tsr")
    index = FeatureIndex(bands=features.names, reflectance=list(features.reflectance),
                         lst_supplied=features.lst_supplied,
                         elevation_supplied=features.elevation_supplied)
    (directory / FEATURE_INDEX).write_text(index.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Wrote {len(features.bands)} feature bands to {directory}")
    return directory


def read_feature_raster(directory: PathLike) -> FeatureRaster:
    directory = Path(directory)
    try:
        index = FeatureIndex.model_validate_json(
            (directory / FEATURE_INDEX).read_text(encoding="utf-8"))
    except ValidationError as e:
        raise RasterError(f"invalid feature index in {directory}: {e}") from None
    bands = {name: read_tsr(directory / f"{name}.tsr") for name in index.bands}
    return FeatureRaster(bands, tuple(index.reflectance), index.lst_supplied,
                         index.elevation_supplied)


def load_time_stack(directory: PathLike) -> TimeStack:
    """Load every ``<stem>.tsr`` scene of a directory with its ``<stem>_qa.tsr`` mask.

    Raises:
        RasterError: If a scene lacks a QA mask, band id or timestamp.
    """
    directory = Path(directory)
    scenes = []
    for path in sorted(directory.glob("*.tsr")):
        if path.stem.endswith("_qa"):
            continue
        qa = qa_path(path)
        if not qa.exists():
            raise RasterError(f"scene {path.name} has no QA mask {qa.name}")
        grid = read_tsr(path)
        if not grid.band_id:
            raise RasterError(f"scene {path.name} has no band_id")
        scenes.append(Scene(grid, read_tsr(qa)))
    if not scenes:
        raise RasterError(f"no scenes in {directory}")
    logger.info(f"Loaded {len(scenes)} scenes from {directory}")
    return TimeStack(tuple(scenes))


class FeatureStats(BaseModel):
    """Per-feature mean and population std of the training rows."""
    model_config = ConfigDict(frozen=True)

    mean: List[float]
    std: List[float]

    @property
    def constant(self) -> np.ndarray:
        """Flags of zero-variance features, which standardize to 0."""
        return np.asarray(self.std) == 0.0

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.mean):
            raise ValueError(f"expected {len(self.mean)} feature columns, got shape {X.shape}")
        std = np.asarray(self.std)
        safe = np.where(std > 0, std, 1.0)
        return np.where(std > 0, (X - np.asarray(self.mean)) / safe, 0.0)


def standardize_features(X: np.ndarray, stats: Optional[FeatureStats] = None
                         ) -> Tuple[np.ndarray, FeatureStats]:
    """Z-score the columns of ``X``, estimating the stats from ``X`` when absent.

    Zero-std columns map to 0 and are flagged in ``FeatureStats.constant``.
    """
    X = np.asarray(X, dtype=float)
    if stats is None:
        stats = FeatureStats(mean=X.mean(axis=0).tolist(), std=X.std(axis=0).tolist())
        if stats.constant.any():
            logger.warning(f"{int(stats.constant.sum())} constant feature(s) standardized to 0")
    return stats.apply(X), stats


class FeaturesConfig(BaseModel):
    """YAML configuration of the features stage."""
    model_config = ConfigDict(extra="forbid")

    scenes: str = Field(..., description="Directory of scene TSRs with _qa masks")
    out: str = Field(..., description="Output feature raster directory")
    roles: BandRoles = Field(default_factory=BandRoles)
    years: Optional[Tuple[int, int]] = Field(None, description="Inclusive year range")
    lst_band: Optional[str] = Field(None, description="Band id of land surface temperature scenes")
    elevation: Optional[str] = Field(None, description="Elevation TSR on the scene grid")
    block_rows: int = Field(DEFAULT_BLOCK_ROWS, ge=1)


def load_features_config(path: PathLike) -> FeaturesConfig:
    """Read and validate a features YAML file.

    Raises:
        ConfigError: If the file is not valid YAML or fails validation.
    """
    try:
        with open(path, "rt", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        return FeaturesConfig.model_validate(data)
    except (yaml.YAMLError, ValidationError) as e:
        raise ConfigError(f"invalid features config {path}: {e}") from None
