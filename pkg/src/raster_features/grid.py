"""Raster geometry and single-band grids.

Grids are north-up: row 0 is the northern edge at ``origin_y`` and columns grow
eastwards from ``origin_x``. Values are held as float64 arrays of shape
(height, width); a cell is valid when it is finite and differs from ``nodata``.
"""

from dataclasses import dataclass, replace
from datetime import date
from typing import Optional, Sequence, Tuple

import numpy as np

DEFAULT_NODATA = -9999.0


class RasterError(ValueError):
    """Raised for malformed rasters or invalid raster operations."""


class GeometryMismatchError(RasterError):
    """Raised when rasters combined in one operation do not share a geometry."""


@dataclass(frozen=True)
class GridGeometry:
    width: int
    height: int
    origin_x: float
    origin_y: float
    pixel_size: float
    crs_tag: str = "EPSG:4326"

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise RasterError(f"grid must have at least one pixel, got {self.width}x{self.height}")
        if not self.pixel_size > 0:
            raise RasterError(f"pixel_size must be positive, got {self.pixel_size}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def extent(self) -> Tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax)."""
        return (self.origin_x, self.origin_y - self.height * self.pixel_size,
                self.origin_x + self.width * self.pixel_size, self.origin_y)

    def column_centers(self) -> np.ndarray:
        return self.origin_x + (np.arange(self.width) + 0.5) * self.pixel_size

    def row_centers(self) -> np.ndarray:
        return self.origin_y - (np.arange(self.height) + 0.5) * self.pixel_size

    def pixel_center(self, row: int, col: int) -> Tuple[float, float]:
        """(x, y) of a pixel center."""
        return (self.origin_x + (col + 0.5) * self.pixel_size,
                self.origin_y - (row + 0.5) * self.pixel_size)

    def coarsened(self, factor: int) -> "GridGeometry":
        """Geometry of ``factor`` x ``factor`` blocks of this grid."""
        if factor < 1 or self.width % factor or self.height % factor:
            raise RasterError(f"grid {self.width}x{self.height} is not divisible by {factor}")
        return replace(self, width=self.width // factor, height=self.height // factor,
                       pixel_size=self.pixel_size * factor)


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """One band on a geometry."""
    geometry: GridGeometry
    values: np.ndarray
    nodata: float = DEFAULT_NODATA
    band_id: str = ""
    timestamp: Optional[date] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size != self.geometry.width * self.geometry.height:
            raise RasterError(f"values hold {values.size} cells, geometry "
                              f"{self.geometry.width}x{self.geometry.height}")
        object.__setattr__(self, "values", values.reshape(self.geometry.shape))
        if not np.isfinite(self.nodata):
            raise RasterError("nodata must be a finite sentinel")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.geometry.shape

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values) & (self.values != self.nodata)

    def masked(self) -> np.ndarray:
        """Values with NaN in invalid cells."""
        return np.where(self.valid, self.values, np.nan)

    @classmethod
    def from_masked(cls, geometry: GridGeometry, values: np.ndarray,
                    nodata: float = DEFAULT_NODATA, band_id: str = "",
                    timestamp: Optional[date] = None) -> "RasterGrid":
        """Grid from an array where NaN marks invalid cells."""
        values = np.asarray(values, dtype=float)
        return cls(geometry, np.where(np.isfinite(values), values, nodata), nodata,
                   band_id, timestamp)

    def with_values(self, values: np.ndarray, band_id: Optional[str] = None) -> "RasterGrid":
        return RasterGrid.from_masked(self.geometry, values, self.nodata,
                                      self.band_id if band_id is None else band_id,
                                      self.timestamp)


def require_same_geometry(grids: Sequence[RasterGrid]) -> GridGeometry:
    """Shared geometry of ``grids``.

    Raises:
        GeometryMismatchError: If any two grids differ in geometry.
    """
    if not grids:
        raise RasterError("no rasters given")
    geometry = grids[0].geometry
    for grid in grids[1:]:
        if grid.geometry != geometry:
            raise GeometryMismatchError(f"geometry {grid.geometry} differs from {geometry}")
    return geometry
