"""
In-situ leaf trait table: ingestion, validation, cleaning and the
species-to-PFT lookup.

Records are immutable; every operation returns a new table. Missing cells are
``None`` in memory and empty strings on disk.
"""

import argparse
import math
import sys
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from logging_utils import get_logger
from stage_processor import StageProcessor

logger = get_logger("traitscale.trait_table")


class TraitTableError(ValueError):
    """Raised for malformed trait tables; ``row`` is the 1-based data row."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class PftClass(IntEnum):
    """Plant functional types with their on-disk class codes."""
    ENF = 1
    EBF = 2
    DNF = 3
    DBF = 4
    SHL = 5
    GRL = 6
    BARREN = 7


VEGETATED_PFTS: Tuple[PftClass, ...] = tuple(p for p in PftClass if p != PftClass.BARREN)
CLASS_CODES: Dict[str, int] = {p.name: int(p) for p in PftClass}


class GrowthForm(str, Enum):
    TREE = "tree"
    SHRUB = "shrub"
    GRASS = "grass"
    OTHER = "other"
    FERN = "fern"
    CROP = "crop"


class LeafType(str, Enum):
    NEEDLELEAF = "needleleaf"
    BROADLEAF = "broadleaf"
    UNKNOWN = "unknown"


class LeafPhenology(str, Enum):
    EVERGREEN = "evergreen"
    DECIDUOUS = "deciduous"
    UNKNOWN = "unknown"


class Trait(str, Enum):
    """The five leaf traits, declared in imputation order (most observed first)."""
    SLA = "sla"
    LDMC = "ldmc"
    LNC = "lnc"
    LPC = "lpc"
    LNPR = "lnpr"


TRAITS: Tuple[Trait, ...] = tuple(Trait)
TRAIT_UNITS: Dict[Trait, str] = {
    Trait.SLA: "mm2 mg-1",
    Trait.LDMC: "g g-1",
    Trait.LNC: "mg g-1",
    Trait.LPC: "mg g-1",
    Trait.LNPR: "-",
}

N_BIOCLIM = 19
BIOCLIM_COLUMNS: Tuple[str, ...] = tuple(f"bio{i}" for i in range(1, N_BIOCLIM + 1))
BIOCLIM_DESCRIPTIONS: Dict[str, str] = {
    "bio1": "Annual mean temperature (degC)",
    "bio2": "Mean diurnal range (degC)",
    "bio3": "Isothermality (bio2/bio7, x100)",
    "bio4": "Temperature seasonality (std x100)",
    "bio5": "Max temperature of warmest month (degC)",
    "bio6": "Min temperature of coldest month (degC)",
    "bio7": "Temperature annual range (bio5-bio6, degC)",
    "bio8": "Mean temperature of wettest quarter (degC)",
    "bio9": "Mean temperature of driest quarter (degC)",
    "bio10": "Mean temperature of warmest quarter (degC)",
    "bio11": "Mean temperature of coldest quarter (degC)",
    "bio12": "Annual precipitation (mm)",
    "bio13": "Precipitation of wettest month (mm)",
    "bio14": "Precipitation of driest month (mm)",
    "bio15": "Precipitation seasonality (coefficient of variation)",
    "bio16": "Precipitation of wettest quarter (mm)",
    "bio17": "Precipitation of driest quarter (mm)",
    "bio18": "Precipitation of warmest quarter (mm)",
    "bio19": "Precipitation of coldest quarter (mm)",
}

TAXONOMY_COLUMNS: Tuple[str, ...] = ("species", "genus", "family")
CATEGORY_COLUMNS: Tuple[str, ...] = ("growth_form", "leaf_type", "leaf_phenology")
CSV_COLUMNS: Tuple[str, ...] = (
    ("record_id",) + TAXONOMY_COLUMNS + CATEGORY_COLUMNS + ("lat", "lon")
    + BIOCLIM_COLUMNS + tuple(t.value for t in TRAITS)
)

DEFAULT_COLUMN_SCHEMA: Tuple[str, ...] = (
    TAXONOMY_COLUMNS + CATEGORY_COLUMNS + BIOCLIM_COLUMNS + tuple(t.value for t in TRAITS)
)
"""Predictor columns available to gap-filling, in declared order."""

CATEGORICAL_PREDICTORS: FrozenSet[str] = frozenset(TAXONOMY_COLUMNS + CATEGORY_COLUMNS)

DEFAULT_EXCLUDED_FORMS: FrozenSet[GrowthForm] = frozenset({GrowthForm.FERN, GrowthForm.CROP})

_REFERENCE_PATH = Path(__file__).parent / "pft_reference.yaml"


@dataclass(frozen=True)
class TraitRecord:
    """One in-situ measurement row."""

    record_id: str
    species: str
    genus: str
    family: str
    growth_form: GrowthForm = GrowthForm.OTHER
    leaf_type: LeafType = LeafType.UNKNOWN
    leaf_phenology: LeafPhenology = LeafPhenology.UNKNOWN
    latitude: Optional[float] = None
    longitude: Optional[float] = None
    climate: Tuple[Optional[float], ...] = (None,) * N_BIOCLIM
    traits: Tuple[Optional[float], ...] = (None,) * len(TRAITS)

    def __post_init__(self):
        if len(self.climate) != N_BIOCLIM:
            raise TraitTableError(f"{self.record_id}: expected {N_BIOCLIM} climate values")
        if len(self.traits) != len(TRAITS):
            raise TraitTableError(f"{self.record_id}: expected {len(TRAITS)} trait values")
        if (self.latitude is None) != (self.longitude is None):
            raise TraitTableError(f"{self.record_id}: latitude and longitude must be given together")
        if self.latitude is not None and not -90.0 <= self.latitude <= 90.0:
            raise TraitTableError(f"{self.record_id}: latitude {self.latitude} out of range")
        if self.longitude is not None and not -180.0 <= self.longitude <= 180.0:
            raise TraitTableError(f"{self.record_id}: longitude {self.longitude} out of range")
        for trait, value in zip(TRAITS, self.traits):
            if value is None:
                continue
            if not math.isfinite(value) or value <= 0.0:
                raise TraitTableError(f"{self.record_id}: {trait.value} must be positive, got {value}")
            if trait is Trait.LDMC and value >= 1.0:
                raise TraitTableError(f"{self.record_id}: ldmc must lie in (0, 1), got {value}")

    @property
    def georeferenced(self) -> bool:
        return self.latitude is not None

    def trait(self, trait: Trait) -> Optional[float]:
        return self.traits[TRAITS.index(trait)]

    def with_trait(self, trait: Trait, value: Optional[float]) -> "TraitRecord":
        values = list(self.traits)
        values[TRAITS.index(trait)] = value
        return replace(self, traits=tuple(values))


@dataclass(frozen=True)
class TraitTable:
    """Ordered, immutable collection of trait records."""

    records: Tuple[TraitRecord, ...]
    column_schema: Tuple[str, ...] = DEFAULT_COLUMN_SCHEMA
    _ids: Dict[str, int] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if len(set(self.column_schema)) != len(self.column_schema):
            raise TraitTableError("column schema lists a predictor more than once")
        ids: Dict[str, int] = {}
        for i, record in enumerate(self.records):
            if record.record_id in ids:
                raise TraitTableError(f"duplicate record_id {record.record_id!r}", row=i + 1)
            ids[record.record_id] = i
        object.__setattr__(self, "_ids", ids)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, record_id: str) -> TraitRecord:
        return self.records[self._ids[record_id]]

    def with_records(self, records: Iterable[TraitRecord]) -> "TraitTable":
        return TraitTable(tuple(records), self.column_schema)

    @property
    def record_ids(self) -> List[str]:
        return [r.record_id for r in self.records]


def trait_values(table: TraitTable, trait: Trait) -> np.ndarray:
    """Trait column as a float array with NaN for missing cells."""
    index = TRAITS.index(trait)
    return np.array([np.nan if r.traits[index] is None else r.traits[index]
                     for r in table.records], dtype=float)


def trait_matrix(table: TraitTable) -> np.ndarray:
    """(n_records, 5) trait array in ``TRAITS`` order, NaN for missing."""
    return np.column_stack([trait_values(table, t) for t in TRAITS]) if len(table) \
        else np.zeros((0, len(TRAITS)))


def observed_counts(table: TraitTable) -> Dict[Trait, int]:
    return {t: int(np.isfinite(trait_values(table, t)).sum()) for t in TRAITS}


def _parse_float(text: str, column: str, row: int) -> Optional[float]:
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise TraitTableError(f"unparsable numeric cell {column}={text!r}", row=row) from None
    if not math.isfinite(value):
        raise TraitTableError(f"non-finite numeric cell {column}={text!r}", row=row)
    return value


def _parse_enum(enum_cls, text: str, default, column: str, row: int):
    text = text.strip().lower()
    if text == "":
        return default
    try:
        return enum_cls(text)
    except ValueError:
        raise TraitTableError(f"unknown {column} value {text!r}", row=row) from None


def load_trait_table(path: Union[str, Path],
                     schema: Sequence[str] = DEFAULT_COLUMN_SCHEMA) -> TraitTable:
    """Load a trait table CSV.

    Args:
        path: CSV file following the trait table contract.
        schema: Declared predictor column order carried by the returned table.

    Returns:
        The parsed table, one record per data row.

    Raises:
        TraitTableError: On a missing header column or a malformed row.
    """
    logger.debug(f"Loading trait table: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise TraitTableError(f"missing required header column(s): {', '.join(missing)}")

    records: List[TraitRecord] = []
    for i, row in enumerate(frame.itertuples(index=False), start=1):
        cells = row._asdict()
        record_id = cells["record_id"].strip()
        if not record_id:
            raise TraitTableError("empty record_id", row=i)
        lat = _parse_float(cells["lat"], "lat", i)
        lon = _parse_float(cells["lon"], "lon", i)
        if lat is not None and not -90.0 <= lat <= 90.0:
            raise TraitTableError(f"latitude {lat} out of range", row=i)
        if lon is not None and not -180.0 <= lon <= 180.0:
            raise TraitTableError(f"longitude {lon} out of range", row=i)
        try:
            records.append(TraitRecord(
                record_id=record_id,
                species=cells["species"].strip(),
                genus=cells["genus"].strip(),
                family=cells["family"].strip(),
                growth_form=_parse_enum(GrowthForm, cells["growth_form"], GrowthForm.OTHER,
                                        "growth_form", i),
                leaf_type=_parse_enum(LeafType, cells["leaf_type"], LeafType.UNKNOWN,
                                      "leaf_type", i),
                leaf_phenology=_parse_enum(LeafPhenology, cells["leaf_phenology"],
                                           LeafPhenology.UNKNOWN, "leaf_phenology", i),
                latitude=lat,
                longitude=lon,
                climate=tuple(_parse_float(cells[c], c, i) for c in BIOCLIM_COLUMNS),
                traits=tuple(_parse_float(cells[t.value], t.value, i) for t in TRAITS),
            ))
        except TraitTableError as e:
            if e.row is not None:
                raise
            raise TraitTableError(str(e), row=i) from None
    logger.info(f"Loaded {len(records)} trait records from {path}")
    return TraitTable(tuple(records), tuple(schema))


def _format(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def save_trait_table(table: TraitTable, path: Union[str, Path]) -> None:
    """Write a table in the CSV contract; floats keep full precision."""
    rows = []
    for r in table.records:
        row = {
            "record_id": r.record_id, "species": r.species, "genus": r.genus,
            "family": r.family, "growth_form": r.growth_form.value,
            "leaf_type": r.leaf_type.value, "leaf_phenology": r.leaf_phenology.value,
            "lat": _format(r.latitude), "lon": _format(r.longitude),
        }
        row.update({c: _format(v) for c, v in zip(BIOCLIM_COLUMNS, r.climate)})
        row.update({t.value: _format(v) for t, v in zip(TRAITS, r.traits)})
        rows.append(row)
    frame = pd.DataFrame(rows, columns=list(CSV_COLUMNS))
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    logger.info(f"Wrote {len(rows)} trait records to {path}")


GroupStats = Dict[Tuple[str, Trait], Tuple[float, float, int]]


def species_trait_stats(table: TraitTable) -> GroupStats:
    """Mean, population std and count per (species, trait) over present values."""
    frame = pd.DataFrame({"species": [r.species for r in table.records]})
    for trait in TRAITS:
        frame[trait.value] = trait_values(table, trait)
    stats: GroupStats = {}
    grouped = frame.groupby("species", sort=True)
    for trait in TRAITS:
        agg = grouped[trait.value].agg(["mean", lambda s: s.std(ddof=0), "count"])
        agg.columns = ["mean", "std", "count"]
        for species, (mean, std, count) in agg.iterrows():
            if count > 0:
                stats[(species, trait)] = (float(mean), float(std), int(count))
    return stats


def remove_outliers(table: TraitTable, k: float = 1.5,
                    stats: Optional[GroupStats] = None
                    ) -> Tuple[TraitTable, List[Tuple[str, Trait]]]:
    """Blank trait values further than ``k`` population std from their species mean.

    Statistics are computed once on the input (single pass). Passing the
    statistics of an earlier call reapplies the same cut.

    Returns:
        The cleaned table and the (record_id, trait) cells that were blanked.
    """
    if k <= 0:
        raise TraitTableError(f"outlier factor must be positive, got {k}")
    if stats is None:
        stats = species_trait_stats(table)

    removed: List[Tuple[str, Trait]] = []
    records = []
    for record in table.records:
        updated = record
        for trait, value in zip(TRAITS, record.traits):
            if value is None:
                continue
            mean, std, count = stats.get((record.species, trait), (0.0, 0.0, 0))
            if count < 2:
                continue
            if abs(value - mean) > k * std:
                updated = updated.with_trait(trait, None)
                removed.append((record.record_id, trait))
        records.append(updated)
    logger.info(f"Outlier pass (k={k}) removed {len(removed)} trait values")
    return table.with_records(records), removed


def drop_excluded_groups(table: TraitTable,
                         excluded_forms: Iterable[GrowthForm] = DEFAULT_EXCLUDED_FORMS
                         ) -> TraitTable:
    """Remove records whose growth form is excluded (ferns and crops by default)."""
    excluded = frozenset(GrowthForm(f) for f in excluded_forms)
    kept = [r for r in table.records if r.growth_form not in excluded]
    logger.info(f"Dropped {len(table) - len(kept)} records with excluded growth forms "
                f"{sorted(f.value for f in excluded)}")
    return table.with_records(kept)


def pft_from_categories(growth_form: GrowthForm, leaf_type: LeafType,
                        leaf_phenology: LeafPhenology) -> Optional[PftClass]:
    if growth_form is GrowthForm.SHRUB:
        return PftClass.SHL
    if growth_form is GrowthForm.GRASS:
        return PftClass.GRL
    if growth_form is not GrowthForm.TREE:
        return None
    lookup = {
        (LeafType.NEEDLELEAF, LeafPhenology.EVERGREEN): PftClass.ENF,
        (LeafType.BROADLEAF, LeafPhenology.EVERGREEN): PftClass.EBF,
        (LeafType.NEEDLELEAF, LeafPhenology.DECIDUOUS): PftClass.DNF,
        (LeafType.BROADLEAF, LeafPhenology.DECIDUOUS): PftClass.DBF,
    }
    return lookup.get((leaf_type, leaf_phenology))


def species_to_pft(record: TraitRecord) -> Optional[PftClass]:
    """PFT of a record from its categorical traits, or None when undetermined."""
    return pft_from_categories(record.growth_form, record.leaf_type, record.leaf_phenology)


def load_pft_reference(path: Union[str, Path] = _REFERENCE_PATH
                       ) -> Dict[PftClass, Dict[Trait, Tuple[float, float]]]:
    """Per-PFT leaf-level (mean, std) of each trait."""
    with open(path, "rt", encoding="utf-8") as f:
        raw = yaml.safe_load(f)
    return {
        PftClass[pft]: {Trait(t): (float(v["mean"]), float(v["std"])) for t, v in traits.items()}
        for pft, traits in raw.items()
    }


PFT_TRAIT_REFERENCE = load_pft_reference()


class CleanProcessor(StageProcessor):
    """Processor for the clean stage."""

    stage_name = "clean"
    handled_errors = (TraitTableError,)

    def get_description(self) -> str:
        return "Drop excluded growth forms and blank per-species trait outliers"

    def add_arguments(self, parser) -> None:
        parser.add_argument("--in", dest="input", required=True, help="Input trait table CSV")
        parser.add_argument("--out", required=True, help="Output CSV")
        parser.add_argument("--k", type=float, default=1.5,
                            help="Outlier factor in population std (default: 1.5)")

    def execute(self, args: argparse.Namespace) -> None:
        table = load_trait_table(args.input)
        kept = drop_excluded_groups(table)
        cleaned, blanked = remove_outliers(kept, args.k)
        save_trait_table(cleaned, args.out)
        logger.info(f"Kept {len(kept)} of {len(table)} records, blanked {len(blanked)} "
                    f"outlier cells")


def main() -> int:
    """Run the clean stage.

    Returns:
        Exit code (0 for success, non-zero for failure).
    """
    return CleanProcessor().run()


if __name__ == "__main__":
    sys.exit(main())
