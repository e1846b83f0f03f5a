"""Predictor schema shared by every tree of a forest."""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Sequence, Tuple

import numpy as np


class ColumnKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ColumnSpec:
    """One predictor column.

    Categorical columns hold non-negative integer codes indexing ``levels``;
    missing cells are NaN for both kinds.
    """
    name: str
    kind: ColumnKind = ColumnKind.NUMERIC
    levels: Tuple[str, ...] = ()

    @property
    def categorical(self) -> bool:
        return self.kind is ColumnKind.CATEGORICAL

    def to_dict(self) -> Dict:
        return {"name": self.name, "kind": self.kind.value, "levels": list(self.levels)}

    @classmethod
    def from_dict(cls, data: Dict) -> "ColumnSpec":
        return cls(data["name"], ColumnKind(data["kind"]), tuple(data.get("levels", ())))


@dataclass(frozen=True)
class ColumnSchema:
    columns: Tuple[ColumnSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("column schema lists a predictor more than once")

    def __len__(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.columns]

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([c.categorical for c in self.columns], dtype=bool)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def permuted(self, order: Sequence[int]) -> "ColumnSchema":
        return ColumnSchema(tuple(self.columns[i] for i in order))

    def to_list(self) -> List[Dict]:
        return [c.to_dict() for c in self.columns]

    @classmethod
    def from_list(cls, data: Sequence[Dict]) -> "ColumnSchema":
        return cls(tuple(ColumnSpec.from_dict(d) for d in data))

    @classmethod
    def numeric(cls, names: Sequence[str]) -> "ColumnSchema":
        return cls(tuple(ColumnSpec(n) for n in names))
