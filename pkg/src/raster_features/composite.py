"""Temporal compositing, vegetation indices, resampling and row-block helpers."""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from logging_utils import get_logger
from raster_features.grid import (
    GeometryMismatchError,
    GridGeometry,
    RasterError,
    RasterGrid,
    require_same_geometry,
)

logger = get_logger("traitscale.raster")

DEFAULT_BLOCK_ROWS = 64
DENOMINATOR_EPS = 1e-6

# EVI coefficients: gain, red and blue aerosol terms, canopy background.
EVI_G = 2.5
EVI_C1 = 6.0
EVI_C2 = 7.5
EVI_L = 1.0


class VegetationIndex(str, Enum):
    NDVI = "NDVI"
    EVI = "EVI"
    NDWI = "NDWI"


@dataclass(frozen=True)
class Scene:
    """One dated band acquisition with its QA mask (1 usable, 0 unusable)."""
    grid: RasterGrid
    qa: RasterGrid

    def __post_init__(self):
        if self.grid.timestamp is None:
            raise RasterError(f"scene {self.grid.band_id!r} has no timestamp")
        if self.qa.geometry != self.grid.geometry:
            raise GeometryMismatchError(f"QA mask of {self.grid.band_id} differs in geometry")

    @property
    def usable(self) -> np.ndarray:
        return self.grid.valid & self.qa.valid & (self.qa.values == 1.0)


@dataclass(frozen=True)
class TimeStack:
    scenes: Tuple[Scene, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "scenes", tuple(self.scenes))
        if self.scenes:
            require_same_geometry([s.grid for s in self.scenes])

    @property
    def geometry(self) -> GridGeometry:
        if not self.scenes:
            raise RasterError("empty time stack")
        return self.scenes[0].grid.geometry

    def band_ids(self) -> List[str]:
        return sorted({s.grid.band_id for s in self.scenes})

    def select(self, band: str, years: Optional[Tuple[int, int]] = None) -> List[Scene]:
        """Scenes of ``band`` whose year lies in the inclusive range ``years``."""
        return [s for s in self.scenes if s.grid.band_id == band
                and (years is None or years[0] <= s.grid.timestamp.year <= years[1])]


def map_row_blocks(func: Callable[[int, int], np.ndarray], n_rows: int,
                   block_rows: int = DEFAULT_BLOCK_ROWS, n_jobs: int = 1) -> np.ndarray:
    """Evaluate ``func(start, stop)`` over consecutive row blocks and stack the results.

    ``func`` must return the rows ``start:stop`` of the output along axis 0, so the
    result does not depend on ``block_rows`` or ``n_jobs``.
    """
    if block_rows < 1:
        raise RasterError(f"block_rows must be >= 1, got {block_rows}")
    bounds = [(start, min(start + block_rows, n_rows)) for start in range(0, n_rows, block_rows)]
    if n_jobs > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            blocks = list(pool.map(lambda b: func(*b), bounds))
    else:
        blocks = [func(start, stop) for start, stop in bounds]
    return np.concatenate(blocks, axis=0)


def monthly_median_composite(stack: TimeStack, band: str,
                             years: Optional[Tuple[int, int]] = None,
                             n_jobs: int = 1, block_rows: int = DEFAULT_BLOCK_ROWS
                             ) -> List[RasterGrid]:
    """Twelve calendar-month medians of the QA-usable observations of ``band``.

    Pixel-months without a usable observation are nodata.

    Raises:
        RasterError: If the stack holds no scene of ``band`` in ``years``.
    """
    scenes = stack.select(band, years)
    if not scenes:
        raise RasterError(f"no scenes for band {band!r} in years {years}")
    geometry = stack.geometry
    nodata = scenes[0].grid.nodata
    logger.debug(f"Compositing {len(scenes)} scenes of {band}")

    composites = []
    for month in range(1, 13):
        in_month = [s for s in scenes if s.grid.timestamp.month == month]
        if not in_month:
            values = np.full(geometry.shape, np.nan)
        else:
            cube = np.stack([np.where(s.usable, s.grid.values, np.nan) for s in in_month])

            def rows(start: int, stop: int, cube=cube) -> np.ndarray:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    return np.nanmedian(cube[:, start:stop], axis=0)

            values = map_row_blocks(rows, geometry.height, block_rows, n_jobs)
        composites.append(RasterGrid.from_masked(geometry, values, nodata, f"{band}_m{month:02d}"))
    return composites


def _normalized_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    num = a - b
    den = a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    out[np.abs(den) < DENOMINATOR_EPS] = np.nan
    # negative reflectances can push the ratio outside [-1, 1]
    out[np.abs(num) > np.abs(den)] = np.nan
    return out


def vegetation_index(red: Optional[RasterGrid] = None, nir: Optional[RasterGrid] = None,
                     blue: Optional[RasterGrid] = None, swir: Optional[RasterGrid] = None,
                     which: VegetationIndex = VegetationIndex.NDVI) -> RasterGrid:
    """NDVI, EVI or NDWI from reflectance grids.

    NDVI uses red and nir, EVI red, nir and blue, NDWI nir and swir. Pixels with
    an invalid input or a denominator below ``DENOMINATOR_EPS`` are nodata.

    Raises:
        RasterError: If a band required by ``which`` is missing.
        GeometryMismatchError: If the bands differ in geometry.
    """
    which = VegetationIndex(which)
    required = {
        VegetationIndex.NDVI: {"red": red, "nir": nir},
        VegetationIndex.EVI: {"red": red, "nir": nir, "blue": blue},
        VegetationIndex.NDWI: {"nir": nir, "swir": swir},
    }[which]
    missing = [name for name, grid in required.items() if grid is None]
    if missing:
        raise RasterError(f"{which.value} requires band(s): {', '.join(missing)}")
    grids = list(required.values())
    geometry = require_same_geometry(grids)
    m = {name: grid.masked() for name, grid in required.items()}

    if which is VegetationIndex.NDVI:
        out = _normalized_difference(m["nir"], m["red"])
    elif which is VegetationIndex.NDWI:
        out = _normalized_difference(m["nir"], m["swir"])
    else:
        den = m["nir"] + EVI_C1 * m["red"] - EVI_C2 * m["blue"] + EVI_L
        with np.errstate(divide="ignore", invalid="ignore"):
            out = EVI_G * (m["nir"] - m["red"]) / den
        out[np.abs(den) < DENOMINATOR_EPS] = np.nan
    return RasterGrid.from_masked(geometry, out, grids[0].nodata, which.value,
                                  grids[0].timestamp)


def annual_summary(monthlies: Sequence[RasterGrid]
                   ) -> Tuple[RasterGrid, RasterGrid, RasterGrid, RasterGrid]:
    """Per-pixel max, min, population std and sum over the valid months.

    Pixels without a valid month are nodata in all four outputs; pixels with a
    single valid month are nodata in std only.
    """
    if len(monthlies) != 12:
        raise RasterError(f"annual summary needs 12 monthly grids, got {len(monthlies)}")
    geometry = require_same_geometry(monthlies)
    cube = np.stack([g.masked() for g in monthlies])
    count = np.isfinite(cube).sum(axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        vmax = np.nanmax(cube, axis=0)
        vmin = np.nanmin(cube, axis=0)
        vstd = np.nanstd(cube, axis=0)
    vsum = np.where(count > 0, np.nansum(cube, axis=0), np.nan)
    vstd = np.where(count >= 2, vstd, np.nan)

    nodata = monthlies[0].nodata
    stem = monthlies[0].band_id.split("_m")[0]
    return tuple(RasterGrid.from_masked(geometry, values, nodata, f"{stem}{suffix}")
                 for values, suffix in ((vmax, "max"), (vmin, "min"), (vstd, "std"), (vsum, "sum")))


def mode_composite(yearly_classes: Sequence[RasterGrid]) -> RasterGrid:
    """Per-pixel most frequent class over the years, ties to the lowest code.

    Nodata years are ignored; pixels with no valid year are nodata.
    """
    geometry = require_same_geometry(yearly_classes)
    cube = np.stack([g.masked() for g in yearly_classes])
    valid = np.isfinite(cube)
    codes = np.unique(cube[valid])
    if codes.size == 0:
        return RasterGrid(geometry, np.full(geometry.shape, yearly_classes[0].nodata),
                          yearly_classes[0].nodata, "mode")
    counts = np.stack([((cube == code) & valid).sum(axis=0) for code in codes])
    # argmax returns the first maximum, i.e. the lowest code
    modal = codes[np.argmax(counts, axis=0)]
    modal = np.where(valid.any(axis=0), modal, np.nan)
    return RasterGrid.from_masked(geometry, modal, yearly_classes[0].nodata, "mode")


def _corner_indices(coords: np.ndarray, size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    inside = (coords >= -0.5) & (coords <= size - 0.5)
    lo = np.clip(np.floor(coords).astype(int), 0, size - 1)
    hi = np.minimum(lo + 1, size - 1)
    weight = np.clip(coords - lo, 0.0, 1.0)
    weight = np.where(hi == lo, 0.0, weight)
    return lo, hi, weight, inside


def bilinear_resample(src: RasterGrid, target: GridGeometry, n_jobs: int = 1,
                      block_rows: int = DEFAULT_BLOCK_ROWS) -> RasterGrid:
    """Bilinear interpolation of a continuous raster at the target pixel centers.

    A target pixel is nodata when it falls outside the source grid or when any
    source corner carrying positive weight is invalid.

    Raises:
        GeometryMismatchError: If the CRS tags differ.
        RasterError: If the extents do not overlap.
    """
    geometry = src.geometry
    if geometry.crs_tag != target.crs_tag:
        raise GeometryMismatchError(f"cannot resample {geometry.crs_tag} onto {target.crs_tag}")
    sx0, sy0, sx1, sy1 = geometry.extent
    tx0, ty0, tx1, ty1 = target.extent
    if tx0 >= sx1 or tx1 <= sx0 or ty0 >= sy1 or ty1 <= sy0:
        raise RasterError("source and target extents do not overlap")

    cols = (target.column_centers() - geometry.origin_x) / geometry.pixel_size - 0.5
    c0, c1, wc, col_inside = _corner_indices(cols, geometry.width)
    values = src.masked()

    def rows(start: int, stop: int) -> np.ndarray:
        r = (geometry.origin_y - target.row_centers()[start:stop]) / geometry.pixel_size - 0.5
        r0, r1, wr, row_inside = _corner_indices(r, geometry.height)
        wr = wr[:, None]
        out = np.zeros((stop - start, target.width))
        ok = row_inside[:, None] & col_inside[None, :]
        for ri, rw in ((r0, 1.0 - wr), (r1, wr)):
            for ci, cw in ((c0, 1.0 - wc), (c1, wc)):
                w = rw * cw[None, :]
                corner = values[ri[:, None], ci[None, :]]
                used = w > 0
                ok &= ~used | np.isfinite(corner)
                out += np.where(used, w * np.nan_to_num(corner), 0.0)
        return np.where(ok, out, np.nan)

    out = map_row_blocks(rows, target.height, block_rows, n_jobs)
    return RasterGrid.from_masked(target, out, src.nodata, src.band_id, src.timestamp)


def block_mean(grid: RasterGrid, factor: int) -> RasterGrid:
    """Mean of the valid cells in each ``factor`` x ``factor`` block."""
    coarse = grid.geometry.coarsened(factor)
    blocks = grid.masked().reshape(coarse.height, factor, coarse.width, factor)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        values = np.nanmean(blocks, axis=(1, 3))
    return RasterGrid.from_masked(coarse, values, grid.nodata, grid.band_id, grid.timestamp)
