#!/usr/bin/env python3
"""
Seeded synthetic worlds for desk-scale pipeline runs.

A world holds a fine ground-truth PFT map, the coarse modal reference map with
its purity as quality, fine and coarse monthly scene stacks with QA masks,
climate surfaces on the coarse grid and an in-situ trait table whose per-PFT
distributions follow the bundled leaf-level reference statistics.
"""

import argparse
import math
import sys
from dataclasses import dataclass, replace
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from scipy import ndimage, stats

from logging_utils import get_logger
from raster_features import (
    DEFAULT_REFLECTANCE,
    GridGeometry,
    RasterGrid,
    Scene,
    TimeStack,
    block_mean,
    qa_path,
    write_tsr,
)
from stage_processor import StageProcessor
from trait_table import (
    BIOCLIM_COLUMNS,
    CLASS_CODES,
    PFT_TRAIT_REFERENCE,
    TRAITS,
    VEGETATED_PFTS,
    GrowthForm,
    LeafPhenology,
    LeafType,
    PftClass,
    Trait,
    TraitRecord,
    TraitTable,
    save_trait_table,
)
from traitscale.config import ConfigError

logger = get_logger("traitscale.synth")

PathLike = Union[str, Path]

# Missing-cell fractions of the in-situ database, per trait.
DEFAULT_MISSINGNESS: Dict[str, float] = {"sla": 0.47, "ldmc": 0.45, "lnc": 0.68,
                                         "lpc": 0.74, "lnpr": 0.84}

PFT_CATEGORIES: Dict[PftClass, Tuple[GrowthForm, LeafType, LeafPhenology]] = {
    PftClass.ENF: (GrowthForm.TREE, LeafType.NEEDLELEAF, LeafPhenology.EVERGREEN),
    PftClass.EBF: (GrowthForm.TREE, LeafType.BROADLEAF, LeafPhenology.EVERGREEN),
    PftClass.DNF: (GrowthForm.TREE, LeafType.NEEDLELEAF, LeafPhenology.DECIDUOUS),
    PftClass.DBF: (GrowthForm.TREE, LeafType.BROADLEAF, LeafPhenology.DECIDUOUS),
    PftClass.SHL: (GrowthForm.SHRUB, LeafType.BROADLEAF, LeafPhenology.DECIDUOUS),
    PftClass.GRL: (GrowthForm.GRASS, LeafType.UNKNOWN, LeafPhenology.UNKNOWN),
}

# Base reflectance of B1..B7 (red, nir, blue, green, swir1, swir2, swir3) and
# the amplitude of the seasonal green-up.
SPECTRAL_SIGNATURES: Dict[PftClass, Tuple[Tuple[float, ...], float]] = {
    PftClass.ENF: ((0.04, 0.25, 0.03, 0.05, 0.12, 0.10, 0.06), 0.05),
    PftClass.EBF: ((0.03, 0.35, 0.02, 0.05, 0.15, 0.12, 0.07), 0.02),
    PftClass.DNF: ((0.05, 0.22, 0.04, 0.06, 0.14, 0.12, 0.08), 0.15),
    PftClass.DBF: ((0.06, 0.28, 0.04, 0.07, 0.17, 0.14, 0.09), 0.20),
    PftClass.SHL: ((0.09, 0.22, 0.06, 0.09, 0.22, 0.20, 0.15), 0.08),
    PftClass.GRL: ((0.08, 0.26, 0.05, 0.09, 0.24, 0.22, 0.14), 0.14),
    PftClass.BARREN: ((0.25, 0.30, 0.18, 0.22, 0.35, 0.33, 0.28), 0.0),
}
CLOUD_REFLECTANCE = 0.6

# BIO1..BIO19 at the northern edge and their change to the southern edge.
BIOCLIM_NORTH = (4.0, 9.0, 32.0, 650.0, 21.0, -9.0, 30.0, 12.0, -2.0, 15.0, -5.0,
                 600.0, 80.0, 30.0, 35.0, 220.0, 100.0, 200.0, 130.0)
BIOCLIM_SOUTH_DELTA = (10.0, 3.0, 6.0, -150.0, 9.0, 10.0, -1.0, 8.0, 12.0, 10.0, 10.0,
                       -250.0, -30.0, -20.0, 20.0, -80.0, -60.0, -120.0, 10.0)

# Sign of each trait's response to the southward climate gradient.
CLIMATE_RESPONSE: Dict[Trait, float] = {Trait.SLA: 1.0, Trait.LDMC: -1.0, Trait.LNC: 1.0,
                                        Trait.LPC: -1.0, Trait.LNPR: 1.0}


class SynthError(ValueError):
    """Raised when a synthetic world cannot be generated."""


class SynthConfig(BaseModel):
    """Shape and generative parameters of a synthetic world."""
    model_config = ConfigDict(extra="forbid")

    width: int = Field(64, ge=4, description="Fine grid columns")
    height: int = Field(64, ge=4, description="Fine grid rows")
    coarsen: int = Field(4, ge=2, description="Fine pixels per coarse pixel side")
    origin_lon: float = Field(10.0, ge=-180.0, le=180.0)
    origin_lat: float = Field(50.0, ge=-90.0, le=90.0, description="Latitude of the top edge")
    pixel_deg: float = Field(0.01, gt=0.0, le=1.0, description="Fine pixel size in degrees")
    smoothing: float = Field(4.0, gt=0.0, description="Gaussian smoothing of the PFT fields (fine pixels)")
    year: int = Field(2020, ge=1900, le=2100)
    reflectance_noise: float = Field(0.01, ge=0.0, le=0.2)
    cloud_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    n_records: int = Field(2000, ge=10)
    species_per_pft: int = Field(12, ge=2)
    species_weight: float = Field(0.8, ge=0.0, le=1.0,
                                  description="Share of the trait std carried by species")
    climate_weight: float = Field(0.4, ge=0.0, le=1.0,
                                  description="Share of the trait std carried by climate")
    missingness: Dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_MISSINGNESS))

    @field_validator("missingness")
    @classmethod
    def _missing_fractions(cls, value: Dict[str, float]) -> Dict[str, float]:
        for name, fraction in value.items():
            Trait(name)
            if not 0.0 <= fraction < 1.0:
                raise ValueError(f"missing fraction of {name} must lie in [0, 1), got {fraction}")
        return value

    @property
    def noise_weight(self) -> float:
        rest = 1.0 - self.species_weight ** 2 - self.climate_weight ** 2
        if rest <= 0.0:
            raise SynthError("species_weight^2 + climate_weight^2 must stay below 1")
        return math.sqrt(rest)

    @property
    def fine_geometry(self) -> GridGeometry:
        return GridGeometry(self.width, self.height, self.origin_lon, self.origin_lat,
                            self.pixel_deg)

    @property
    def coarse_geometry(self) -> GridGeometry:
        return self.fine_geometry.coarsened(self.coarsen)


def load_synth_config(path: Optional[PathLike]) -> SynthConfig:
    if path is None:
        return SynthConfig()
    try:
        with open(path, "rt", encoding="utf-8") as f:
            return SynthConfig.model_validate(yaml.safe_load(f) or {})
    except (yaml.YAMLError, ValidationError) as e:
        raise ConfigError(f"invalid synth config {path}: {e}") from None


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    config: SynthConfig
    seed: int
    truth: RasterGrid
    reference: RasterGrid
    quality: RasterGrid
    fine_stack: TimeStack
    coarse_stack: TimeStack
    climate: Dict[str, RasterGrid]
    records: TraitTable
    complete_records: TraitTable
    """The same records before cells were masked."""


def _southness(lat: np.ndarray, config: SynthConfig) -> np.ndarray:
    """0 at the northern edge of the world, 1 at the southern edge."""
    span = config.height * config.pixel_deg
    return np.clip((config.origin_lat - np.asarray(lat, dtype=float)) / span, 0.0, 1.0)


def climate_at(lat: np.ndarray, lon: np.ndarray, config: SynthConfig) -> np.ndarray:
    """BIO1..BIO19 of points, one column per variable."""
    t = _southness(lat, config)[:, None]
    width = config.width * config.pixel_deg
    u = np.clip((np.asarray(lon, dtype=float) - config.origin_lon) / width, 0.0, 1.0)[:, None]
    north = np.asarray(BIOCLIM_NORTH)
    delta = np.asarray(BIOCLIM_SOUTH_DELTA)
    return north + delta * t + 0.05 * delta * u


def pft_map(config: SynthConfig, rng: np.random.Generator) -> RasterGrid:
    """Regions of smoothed Gaussian noise; each pixel takes the class of its largest field."""
    fields = rng.normal(size=(len(PftClass), config.height, config.width))
    smoothed = ndimage.gaussian_filter(fields, sigma=(0.0, config.smoothing, config.smoothing),
                                       mode="reflect")
    codes = np.argmax(smoothed, axis=0) + 1
    return RasterGrid(config.fine_geometry, codes.astype(float), band_id="pft")


def modal_reference(truth: RasterGrid, factor: int) -> Tuple[RasterGrid, RasterGrid]:
    """Coarse modal class (ties to the lowest code) and its block share as quality."""
    coarse = truth.geometry.coarsened(factor)
    blocks = truth.values.reshape(coarse.height, factor, coarse.width, factor)
    counts = np.stack([(blocks == int(p)).sum(axis=(1, 3)) for p in PftClass])
    modal = np.argmax(counts, axis=0) + 1
    purity = counts.max(axis=0) / float(factor * factor)
    return (RasterGrid(coarse, modal.astype(float), band_id="reference"),
            RasterGrid(coarse, purity, band_id="quality"))


def _seasonality(month: int) -> float:
    """Green-up in [0, 1], peaking in July."""
    return 0.5 * (1.0 + math.cos(2.0 * math.pi * (month - 7) / 12.0))


def scene_stacks(truth: RasterGrid, config: SynthConfig,
                 rng: np.random.Generator) -> Tuple[TimeStack, TimeStack]:
    """Monthly fine and coarse scenes of every reflectance band.

    Coarse scenes block-average the cloud-free fine signal and draw their own clouds.
    """
    codes = truth.values.astype(int)
    base = np.array([SPECTRAL_SIGNATURES[PftClass(c)][0] for c in range(1, len(PftClass) + 1)])
    amplitude = np.array([SPECTRAL_SIGNATURES[PftClass(c)][1] for c in range(1, len(PftClass) + 1)])
    fine_scenes: List[Scene] = []
    coarse_scenes: List[Scene] = []
    for month in range(1, 13):
        when = date(config.year, month, 15)
        green = _seasonality(month)
        for b, band in enumerate(DEFAULT_REFLECTANCE):
            signal = base[codes - 1, b]
            if band == "B2":
                signal = signal + amplitude[codes - 1] * green
            elif band == "B1":
                signal = np.maximum(signal - 0.3 * amplitude[codes - 1] * green, 0.01)
            clean = signal + config.reflectance_noise * rng.normal(size=signal.shape)
            cloudy = rng.random(signal.shape) < config.cloud_fraction
            fine = RasterGrid(truth.geometry, np.where(cloudy, CLOUD_REFLECTANCE, clean),
                              band_id=band, timestamp=when)
            fine_qa = RasterGrid(truth.geometry, (~cloudy).astype(float), band_id=f"{band}_qa",
                                 timestamp=when)
            fine_scenes.append(Scene(fine, fine_qa))

            coarse = block_mean(RasterGrid(truth.geometry, clean, band_id=band, timestamp=when),
                                config.coarsen)
            coarse_cloudy = rng.random(coarse.shape) < config.cloud_fraction
            coarse = coarse.with_values(np.where(coarse_cloudy, CLOUD_REFLECTANCE, coarse.values))
            coarse_qa = RasterGrid(coarse.geometry, (~coarse_cloudy).astype(float),
                                   band_id=f"{band}_qa", timestamp=when)
            coarse_scenes.append(Scene(coarse, coarse_qa))
    return TimeStack(tuple(fine_scenes)), TimeStack(tuple(coarse_scenes))


def climate_grids(config: SynthConfig) -> Dict[str, RasterGrid]:
    geometry = config.coarse_geometry
    lon, lat = np.meshgrid(geometry.column_centers(), geometry.row_centers())
    values = climate_at(lat.ravel(), lon.ravel(), config)
    return {name: RasterGrid(geometry, values[:, i], band_id=name)
            for i, name in enumerate(BIOCLIM_COLUMNS)}


def _species_effects(config: SynthConfig, rng: np.random.Generator) -> Dict[PftClass, np.ndarray]:
    """Per PFT, species x trait effects standardized to zero mean and unit variance."""
    effects = {}
    for pft in VEGETATED_PFTS:
        raw = rng.normal(size=(config.species_per_pft, len(TRAITS)))
        raw -= raw.mean(axis=0)
        effects[pft] = raw / raw.std(axis=0)
    return effects


def _trait_bounds(trait: Trait, mean: float) -> Tuple[float, float]:
    upper = 0.99 if trait is Trait.LDMC else math.inf
    return 0.01 * mean, upper


def synth_records(truth: RasterGrid, config: SynthConfig,
                  rng: np.random.Generator) -> Tuple[TraitTable, TraitTable]:
    """Georeferenced records on vegetated pixels, complete and with masked cells.

    Each trait value is the PFT reference mean plus its std times a mix of a
    species effect, a standardized climate gradient and noise, truncated to
    the trait's valid range.
    """
    geometry = truth.geometry
    if (truth.values == int(PftClass.BARREN)).all():
        raise SynthError("the PFT map has no vegetated pixel to place records on")
    xmin, ymin, xmax, ymax = geometry.extent
    lat = np.empty(0)
    lon = np.empty(0)
    codes = np.empty(0, dtype=int)
    while lat.size < config.n_records:
        cand_lat = rng.uniform(ymin, ymax, size=config.n_records)
        cand_lon = rng.uniform(xmin, xmax, size=config.n_records)
        rows = np.minimum(((ymax - cand_lat) / geometry.pixel_size).astype(int), geometry.height - 1)
        cols = np.minimum(((cand_lon - xmin) / geometry.pixel_size).astype(int), geometry.width - 1)
        cand_codes = truth.values[rows, cols].astype(int)
        keep = cand_codes != int(PftClass.BARREN)
        lat = np.concatenate([lat, cand_lat[keep]])
        lon = np.concatenate([lon, cand_lon[keep]])
        codes = np.concatenate([codes, cand_codes[keep]])
    lat, lon, codes = lat[:config.n_records], lon[:config.n_records], codes[:config.n_records]

    species = rng.integers(0, config.species_per_pft, size=config.n_records)
    effects = _species_effects(config, rng)
    gradient = math.sqrt(3.0) * (2.0 * _southness(lat, config) - 1.0)
    climate = climate_at(lat, lon, config)
    noise_weight = config.noise_weight

    values = np.empty((config.n_records, len(TRAITS)))
    for j, trait in enumerate(TRAITS):
        for pft in VEGETATED_PFTS:
            rows = np.flatnonzero(codes == int(pft))
            if not rows.size:
                continue
            mean, std = PFT_TRAIT_REFERENCE[pft][trait]
            shift = (config.species_weight * effects[pft][species[rows], j]
                     + config.climate_weight * CLIMATE_RESPONSE[trait] * gradient[rows])
            lower, upper = _trait_bounds(trait, mean)
            a = ((lower - mean) / std - shift) / noise_weight
            b = ((upper - mean) / std - shift) / noise_weight
            eps = stats.truncnorm.rvs(a, b, size=rows.size, random_state=rng)
            values[rows, j] = mean + std * (shift + noise_weight * eps)

    missing = np.zeros_like(values, dtype=bool)
    for j, trait in enumerate(TRAITS):
        n_missing = int(round(config.missingness.get(trait.value, 0.0) * config.n_records))
        missing[rng.choice(config.n_records, size=n_missing, replace=False), j] = True

    complete, masked = [], []
    for i in range(config.n_records):
        pft = PftClass(int(codes[i]))
        growth_form, leaf_type, phenology = PFT_CATEGORIES[pft]
        genus = f"{pft.name.capitalize()}genus{species[i] // 3:02d}"
        record = TraitRecord(
            record_id=f"r{i:06d}", species=f"{genus} sp{species[i]:02d}", genus=genus,
            family=f"{pft.name.capitalize()}aceae", growth_form=growth_form, leaf_type=leaf_type,
            leaf_phenology=phenology, latitude=float(lat[i]), longitude=float(lon[i]),
            climate=tuple(float(v) for v in climate[i]),
            traits=tuple(float(v) for v in values[i]))
        complete.append(record)
        masked.append(replace(record, traits=tuple(
            None if missing[i, j] else float(values[i, j]) for j in range(len(TRAITS)))))
    return TraitTable(masked), TraitTable(complete)


def synth_world(config: SynthConfig = SynthConfig(), seed: int = 0) -> SyntheticWorld:
    """Generate a world; the same config and seed give a bit-identical world."""
    if config.width % config.coarsen or config.height % config.coarsen:
        raise SynthError(f"{config.width}x{config.height} grid is not divisible by "
                         f"{config.coarsen}")
    noise_weight = config.noise_weight
    logger.debug(f"Trait noise weight {noise_weight:.3f}")
    map_seq, scene_seq, record_seq = np.random.SeedSequence(seed).spawn(3)
    truth = pft_map(config, np.random.default_rng(map_seq))
    reference, quality = modal_reference(truth, config.coarsen)
    fine_stack, coarse_stack = scene_stacks(truth, config, np.random.default_rng(scene_seq))
    records, complete = synth_records(truth, config, np.random.default_rng(record_seq))
    shares = {p.name: round(float((truth.values == int(p)).mean()), 3) for p in PftClass}
    logger.info(f"Synthetic world {config.width}x{config.height} (coarsen {config.coarsen}), "
                f"{len(records)} records, class shares {shares}")
    return SyntheticWorld(config, seed, truth, reference, quality, fine_stack, coarse_stack,
                          climate_grids(config), records, complete)


@dataclass(frozen=True)
class WorldLayout:
    """File layout of a world written by ``write_world``."""
    root: Path

    @property
    def truth(self) -> Path:
        return self.root / "truth_pft.tsr"

    @property
    def reference(self) -> Path:
        return self.root / "reference.tsr"

    @property
    def quality(self) -> Path:
        return self.root / "quality.tsr"

    @property
    def fine_scenes(self) -> Path:
        return self.root / "scenes_fine"

    @property
    def coarse_scenes(self) -> Path:
        return self.root / "scenes_coarse"

    @property
    def climate(self) -> Path:
        return self.root / "climate"

    @property
    def records(self) -> Path:
        return self.root / "records.csv"

    @property
    def complete_records(self) -> Path:
        return self.root / "records_complete.csv"

    @property
    def config(self) -> Path:
        return self.root / "world.yaml"


def _write_stack(stack: TimeStack, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for scene in stack.scenes:
        path = directory / f"{scene.grid.band_id}_{scene.grid.timestamp:%Y%m%d}.tsr"
        write_tsr(scene.grid, path)
        write_tsr(scene.qa, qa_path(path))


def write_world(world: SyntheticWorld, directory: PathLike) -> WorldLayout:
    layout = WorldLayout(Path(directory))
    layout.root.mkdir(parents=True, exist_ok=True)
    write_tsr(world.truth, layout.truth, class_codes=CLASS_CODES)
    write_tsr(world.reference, layout.reference, class_codes=CLASS_CODES)
    write_tsr(world.quality, layout.quality)
    _write_stack(world.fine_stack, layout.fine_scenes)
    _write_stack(world.coarse_stack, layout.coarse_scenes)
    layout.climate.mkdir(exist_ok=True)
    for name, grid in world.climate.items():
        write_tsr(grid, layout.climate / f"{name}.tsr")
    save_trait_table(world.records, layout.records)
    save_trait_table(world.complete_records, layout.complete_records)
    with open(layout.config, "wt", encoding="utf-8") as f:
        yaml.safe_dump({"seed": world.seed, **world.config.model_dump()}, f, sort_keys=False)
    logger.info(f"Wrote synthetic world to {layout.root}")
    return layout


class SynthProcessor(StageProcessor):
    """Processor for the synth stage."""

    stage_name = "synth"
    handled_errors = (SynthError, ConfigError)

    def get_description(self) -> str:
        return "Generate a seeded synthetic world for a desk-scale pipeline run"

    def add_arguments(self, parser) -> None:
        parser.add_argument("--out", required=True, help="Output world directory")
        parser.add_argument("--config", help="Synthetic world YAML (default: built-in)")
        parser.add_argument("--pipeline-config", help="Also write a pipeline YAML for this world")

    def execute(self, args: argparse.Namespace) -> None:
        world = synth_world(load_synth_config(args.config), args.seed)
        layout = write_world(world, args.out)
        if args.pipeline_config:
            from traitscale.run_config import dump_config, world_pipeline_config

            dump_config(world_pipeline_config(layout, seed=args.seed, n_jobs=args.n_jobs),
                        args.pipeline_config)


def main() -> int:
    """Run the synth stage.

    Returns:
        Exit code (0 for success, non-zero for failure).
    """
    return SynthProcessor().run()


__all__ = [
    "BIOCLIM_NORTH", "BIOCLIM_SOUTH_DELTA", "CLIMATE_RESPONSE", "DEFAULT_MISSINGNESS",
    "PFT_CATEGORIES", "SPECTRAL_SIGNATURES", "SynthConfig", "SynthError", "SynthProcessor",
    "SyntheticWorld", "WorldLayout", "climate_at", "climate_grids", "load_synth_config",
    "modal_reference", "pft_map", "scene_stacks", "synth_records", "synth_world", "write_world",
]


if __name__ == "__main__":
    sys.exit(main())
