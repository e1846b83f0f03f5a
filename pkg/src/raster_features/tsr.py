"""TSR raster container.

A ``.tsr`` file is a flat little-endian float32 array (row-major, bands stored
one after another) and ``<file>.json`` its header. QA masks use the same
container with 0/1 values.
"""

import json
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from raster_features.grid import DEFAULT_NODATA, GridGeometry, RasterError, RasterGrid

PathLike = Union[str, Path]


class TsrHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    width: int = Field(..., ge=1)
    height: int = Field(..., ge=1)
    origin_x: float
    origin_y: float
    pixel_size: float = Field(..., gt=0)
    crs_tag: str = "EPSG:4326"
    nodata: float = DEFAULT_NODATA
    band_id: str = ""
    timestamp: Optional[date] = None
    band_count: int = Field(1, ge=1)
    band_names: Optional[List[str]] = None
    class_codes: Optional[Dict[str, int]] = Field(
        None, description="Class name to code map for categorical rasters")

    @model_validator(mode="after")
    def _names_match_count(self) -> "TsrHeader":
        if self.band_names is not None and len(self.band_names) != self.band_count:
            raise ValueError(f"{len(self.band_names)} band names for {self.band_count} bands")
        return self

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.width, self.height, self.origin_x, self.origin_y,
                            self.pixel_size, self.crs_tag)


def header_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def qa_path(path: PathLike) -> Path:
    """QA companion ``<stem>_qa.tsr`` of a scene file."""
    path = Path(path)
    return path.with_name(f"{path.stem}_qa{path.suffix}")


def _write(path: PathLike, data: np.ndarray, header: TsrHeader) -> None:
    np.ascontiguousarray(data, dtype="<f4").tofile(str(path))
    with open(header_path(path), "wt", encoding="utf-8") as f:
        f.write(header.model_dump_json(indent=2, exclude_none=True))


def write_tsr(grid: RasterGrid, path: PathLike,
              class_codes: Optional[Dict[str, int]] = None) -> None:
    header = TsrHeader(**_geometry_fields(grid.geometry), nodata=grid.nodata,
                       band_id=grid.band_id, timestamp=grid.timestamp,
                       class_codes=class_codes)
    _write(path, grid.values, header)


def write_tsr_bands(grids: Sequence[RasterGrid], path: PathLike,
                    band_names: Optional[Sequence[str]] = None,
                    class_codes: Optional[Dict[str, int]] = None) -> None:
    """Write several bands sharing one geometry and nodata into one container."""
    if not grids:
        raise RasterError("no bands to write")
    geometry = grids[0].geometry
    if any(g.geometry != geometry or g.nodata != grids[0].nodata for g in grids):
        raise RasterError("bands of one container must share geometry and nodata")
    names = list(band_names) if band_names is not None else [g.band_id for g in grids]
    header = TsrHeader(**_geometry_fields(geometry), nodata=grids[0].nodata,
                       band_count=len(grids), band_names=names, class_codes=class_codes)
    _write(path, np.stack([g.values for g in grids]), header)


def _geometry_fields(geometry: GridGeometry) -> Dict:
    return {"width": geometry.width, "height": geometry.height,
            "origin_x": geometry.origin_x, "origin_y": geometry.origin_y,
            "pixel_size": geometry.pixel_size, "crs_tag": geometry.crs_tag}


def read_tsr_header(path: PathLike) -> TsrHeader:
    try:
        with open(header_path(path), "rt", encoding="utf-8") as f:
            return TsrHeader.model_validate(json.load(f))
    except (json.JSONDecodeError, ValidationError) as e:
        raise RasterError(f"invalid TSR header for {path}: {e}") from None


def read_tsr_bands(path: PathLike) -> Tuple[List[RasterGrid], TsrHeader]:
    """All bands of a container with its header."""
    header = read_tsr_header(path)
    data = np.fromfile(str(path), dtype="<f4")
    expected = header.band_count * header.width * header.height
    if data.size != expected:
        raise RasterError(f"{path}: {data.size} values, header declares {expected}")
    data = data.astype(float).reshape(header.band_count, header.height, header.width)
    names = header.band_names or [header.band_id] * header.band_count
    grids = [RasterGrid(header.geometry, band, header.nodata, name, header.timestamp)
             for band, name in zip(data, names)]
    return grids, header


def read_tsr(path: PathLike) -> RasterGrid:
    grids, header = read_tsr_bands(path)
    if header.band_count != 1:
        raise RasterError(f"{path} holds {header.band_count} bands; use read_tsr_bands")
    return grids[0]
