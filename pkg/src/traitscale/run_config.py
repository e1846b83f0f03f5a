"""Pipeline configuration.

A run is described by one YAML document validated by ``PipelineConfig``.
Unknown keys are rejected at every level and ``load_config(dump_config(c))``
returns ``c`` unchanged.
"""

import hashlib
import json
from pathlib import Path
from typing import List, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from cwm import DEFAULT_K, DEFAULT_MAX_KM, DEFAULT_MIN_REPRESENTED, CwmConfig
from gapfill import DEFAULT_FOLDS, DEFAULT_GRID, HyperparameterGrid
from pft_downscale import DEFAULT_CLASSIFIER_PARAMS, DEFAULT_PER_CLASS, DEFAULT_QUALITY_THRESHOLD
from raster_features import DEFAULT_BLOCK_ROWS, BandRoles
from surrogate_forest import EnsembleMode
from trait_regress import (
    DEFAULT_CV_FRACTION,
    DEFAULT_REALIZATIONS,
    DEFAULT_ROBUSTNESS_FRACTIONS,
    RegressionMethod,
)
from trait_table import TRAITS
from traitscale.config import DEFAULT_N_JOBS, DEFAULT_SEED, ConfigError

PathLike = Union[str, Path]

TRAIT_NAMES = [t.value for t in TRAITS]
METHOD_NAMES = [m.value for m in RegressionMethod]


def _check_traits(value: List[str]) -> List[str]:
    unknown = [t for t in value if t not in TRAIT_NAMES]
    if unknown or len(set(value)) != len(value):
        raise ValueError(f"traits must be distinct names from {TRAIT_NAMES}, got {value}")
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class InputsSection(_Section):
    records: str = Field(..., description="In-situ trait table CSV")
    fine_scenes: str = Field(..., description="Fine scene directory with _qa masks")
    coarse_scenes: str = Field(..., description="Coarse scene directory on the reference grid")
    reference: List[str] = Field(..., min_length=1, description="Coarse reference class TSR(s)")
    quality: str = Field(..., description="Reference quality TSR in [0, 1]")
    climate: Optional[str] = Field(None, description="Directory of bio1.tsr ... bio19.tsr")
    mask: Optional[str] = Field(None, description="Fine exclusion mask TSR")


class GapfillSection(_Section):
    enabled: bool = Field(True, description="When false the records are used as already imputed")
    folds: int = Field(DEFAULT_FOLDS, ge=2, le=50)
    n_trees: List[int] = Field(list(DEFAULT_GRID.n_trees), min_length=1)
    learning_rate: List[float] = Field(list(DEFAULT_GRID.learning_rate), min_length=1)
    max_splits: List[int] = Field(list(DEFAULT_GRID.max_splits), min_length=1)
    mode: EnsembleMode = DEFAULT_GRID.mode
    clean: bool = Field(True, description="Drop excluded growth forms and species outliers")
    outlier_k: float = Field(1.5, gt=0.0, le=10.0)

    @field_validator("n_trees", "max_splits")
    @classmethod
    def _positive(cls, value: List[int]) -> List[int]:
        if any(v < 1 for v in value):
            raise ValueError(f"grid values must be at least 1, got {value}")
        return value

    @field_validator("learning_rate")
    @classmethod
    def _rates(cls, value: List[float]) -> List[float]:
        if any(not 0.0 < v <= 1.0 for v in value):
            raise ValueError(f"learning rates must lie in (0, 1], got {value}")
        return value

    @property
    def grid(self) -> HyperparameterGrid:
        return HyperparameterGrid(tuple(self.n_trees), tuple(self.learning_rate),
                                  tuple(self.max_splits), self.mode)


class FeaturesSection(_Section):
    fine_roles: BandRoles = Field(default_factory=BandRoles)
    coarse_roles: BandRoles = Field(default_factory=BandRoles)
    years: Optional[Tuple[int, int]] = Field(None, description="Inclusive year range")
    block_rows: int = Field(DEFAULT_BLOCK_ROWS, ge=1)


class ClassifySection(_Section):
    per_class: int = Field(DEFAULT_PER_CLASS, ge=1)
    threshold: float = Field(DEFAULT_QUALITY_THRESHOLD, ge=0.0, le=1.0)
    n_trees: int = Field(DEFAULT_CLASSIFIER_PARAMS.n_trees, ge=1, le=5000)


class CwmSection(_Section):
    max_km: float = Field(DEFAULT_MAX_KM, gt=0.0, le=20000.0)
    k: int = Field(DEFAULT_K, ge=1)
    min_represented: float = Field(DEFAULT_MIN_REPRESENTED, ge=0.0, lt=1.0)
    use_climate: bool = Field(True, description="Append BIO1-BIO19 to the features")

    @property
    def rules(self) -> CwmConfig:
        return CwmConfig(max_km=self.max_km, k=self.k, min_represented=self.min_represented)


class TrainSection(_Section):
    method: RegressionMethod = RegressionMethod.RF
    traits: List[str] = Field(default_factory=lambda: list(TRAIT_NAMES), min_length=1)
    realizations: int = Field(DEFAULT_REALIZATIONS, ge=1, le=1000)
    cv_fraction: float = Field(DEFAULT_CV_FRACTION, gt=0.0, lt=1.0)

    @field_validator("traits")
    @classmethod
    def _known_traits(cls, value: List[str]) -> List[str]:
        return _check_traits(value)


class EvaluateSection(_Section):
    enabled: bool = False
    traits: List[str] = Field(default_factory=lambda: ["sla"], min_length=1)
    methods: List[RegressionMethod] = Field(default_factory=lambda: list(RegressionMethod),
                                            min_length=1)
    realizations: int = Field(DEFAULT_REALIZATIONS, ge=1, le=1000)
    fractions: List[float] = Field(default_factory=lambda: list(DEFAULT_ROBUSTNESS_FRACTIONS))

    @field_validator("traits")
    @classmethod
    def _known_traits(cls, value: List[str]) -> List[str]:
        return _check_traits(value)

    @field_validator("fractions")
    @classmethod
    def _fractions(cls, value: List[float]) -> List[float]:
        if any(not 0.0 < f < 1.0 for f in value):
            raise ValueError(f"training fractions must lie in (0, 1), got {value}")
        return value


class ReportSection(_Section):
    enabled: bool = True
    bin_deg: float = Field(1.0, gt=0.0, le=90.0, description="Latitude bin width")


class PipelineConfig(_Section):
    """Every parameter of a pipeline run."""

    inputs: InputsSection
    seed: int = Field(DEFAULT_SEED, ge=0)
    n_jobs: int = Field(DEFAULT_N_JOBS, ge=1, le=256)
    gapfill: GapfillSection = Field(default_factory=GapfillSection)
    features: FeaturesSection = Field(default_factory=FeaturesSection)
    classify: ClassifySection = Field(default_factory=ClassifySection)
    cwm: CwmSection = Field(default_factory=CwmSection)
    train: TrainSection = Field(default_factory=TrainSection)
    evaluate: EvaluateSection = Field(default_factory=EvaluateSection)
    report: ReportSection = Field(default_factory=ReportSection)

    def to_document(self) -> dict:
        return self.model_dump(mode="json")

    def section_hash(self, section: str) -> str:
        """SHA-256 of the canonical JSON of one section, or of the whole config for ``""``."""
        document = self.to_document()
        if section:
            document = {"seed": self.seed, "n_jobs": self.n_jobs, section: document[section]}
        canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_config(document: dict, source: str = "<config>") -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"invalid pipeline config {source}: {e}") from None


def load_config(path: PathLike) -> PipelineConfig:
    """Read and validate a pipeline YAML file.

    Raises:
        ConfigError: If the file is not valid YAML or fails validation.
    """
    try:
        with open(path, "rt", encoding="utf-8") as f:
            document = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid pipeline config {path}: {e}") from None
    if not isinstance(document, dict):
        raise ConfigError(f"pipeline config {path} is not a mapping")
    return parse_config(document, str(path))


def dump_config(config: PipelineConfig, path: PathLike) -> None:
    with open(path, "wt", encoding="utf-8") as f:
        yaml.safe_dump(config.to_document(), f, sort_keys=False)


def world_pipeline_config(layout, seed: int = DEFAULT_SEED, n_jobs: int = DEFAULT_N_JOBS,
                          **sections) -> PipelineConfig:
    """Config reading every input from a synthetic world layout."""
    root = Path(layout.root).resolve()
    inputs = InputsSection(records=str(root / layout.records.name),
                           fine_scenes=str(root / layout.fine_scenes.name),
                           coarse_scenes=str(root / layout.coarse_scenes.name),
                           reference=[str(root / layout.reference.name)],
                           quality=str(root / layout.quality.name),
                           climate=str(root / layout.climate.name))
    return parse_config({"inputs": inputs.model_dump(), "seed": seed, "n_jobs": n_jobs,
                         **sections})


__all__ = [
    "ClassifySection", "CwmSection", "EvaluateSection", "FeaturesSection", "GapfillSection",
    "InputsSection", "METHOD_NAMES", "PipelineConfig", "ReportSection", "TRAIT_NAMES",
    "TrainSection", "dump_config", "load_config", "parse_config", "world_pipeline_config",
]
