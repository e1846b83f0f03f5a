"""Confusion matrices, overall accuracy and Cohen's kappa."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from sklearn.metrics import confusion_matrix

from trait_table import PftClass


class ClassificationError(ValueError):
    """Raised for invalid classifier inputs or label sets."""


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts indexed (reference class, predicted class)."""
    counts: np.ndarray
    classes: Tuple[PftClass, ...] = tuple(PftClass)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.classes)
        if counts.shape != (k, k):
            raise ClassificationError(f"confusion matrix must be {k}x{k}, got {counts.shape}")
        if (counts < 0).any():
            raise ClassificationError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _require_total(self) -> int:
        if self.total == 0:
            raise ClassificationError("empty confusion matrix")
        return self.total

    @property
    def overall_accuracy(self) -> float:
        return float(np.trace(self.counts)) / self._require_total()

    @property
    def expected_agreement(self) -> float:
        """Chance agreement from the row and column marginals."""
        n = self._require_total()
        rows = self.counts.sum(axis=1).astype(float)
        cols = self.counts.sum(axis=0).astype(float)
        return float(rows @ cols) / (n * n)

    @property
    def kappa_defined(self) -> bool:
        return self.expected_agreement < 1.0

    @property
    def kappa(self) -> Optional[float]:
        """Cohen's kappa, or None when chance agreement is 1."""
        p_e = self.expected_agreement
        if p_e >= 1.0:
            return None
        return (self.overall_accuracy - p_e) / (1.0 - p_e)

    def producer_accuracy(self) -> Dict[str, Optional[float]]:
        """Per reference class, the fraction predicted correctly."""
        rows = self.counts.sum(axis=1)
        return {c.name: (float(self.counts[i, i] / rows[i]) if rows[i] else None)
                for i, c in enumerate(self.classes)}

    def user_accuracy(self) -> Dict[str, Optional[float]]:
        """Per predicted class, the fraction that is correct."""
        cols = self.counts.sum(axis=0)
        return {c.name: (float(self.counts[i, i] / cols[i]) if cols[i] else None)
                for i, c in enumerate(self.classes)}


def confusion_and_kappa(reference: Sequence[int], predicted: Sequence[int],
                        classes: Sequence[PftClass] = tuple(PftClass)
                        ) -> Tuple[ConfusionMatrix, float, Optional[float]]:
    """Confusion matrix, overall accuracy and kappa of two label vectors.

    Kappa is None when the expected agreement is 1; ``ConfusionMatrix.kappa_defined``
    carries the same signal.

    Raises:
        ClassificationError: On empty or mismatched inputs, or labels outside ``classes``.
    """
    ref = np.asarray(reference).astype(int).ravel()
    pred = np.asarray(predicted).astype(int).ravel()
    if ref.shape != pred.shape:
        raise ClassificationError(f"length mismatch: {ref.size} reference, {pred.size} predicted")
    if ref.size == 0:
        raise ClassificationError("no labels to compare")
    codes = [int(c) for c in classes]
    unknown = set(np.unique(np.concatenate([ref, pred])).tolist()) - set(codes)
    if unknown:
        raise ClassificationError(f"labels outside the class set: {sorted(unknown)}")
    cm = ConfusionMatrix(confusion_matrix(ref, pred, labels=codes), tuple(PftClass(c) for c in codes))
    return cm, cm.overall_accuracy, cm.kappa


class AccuracyAssessment(BaseModel):
    """JSON form of a confusion matrix and its summary statistics."""
    classes: List[str]
    confusion_matrix: List[List[int]] = Field(..., description="Rows reference, columns predicted")
    n: int = Field(..., ge=0)
    overall_accuracy: float = Field(..., ge=0.0, le=1.0)
    kappa: Optional[float] = Field(None, le=1.0)
    kappa_defined: bool
    producer_accuracy: Dict[str, Optional[float]]
    user_accuracy: Dict[str, Optional[float]]

    @classmethod
    def from_matrix(cls, cm: ConfusionMatrix) -> "AccuracyAssessment":
        return cls(classes=[c.name for c in cm.classes], confusion_matrix=cm.counts.tolist(),
                   n=cm.total, overall_accuracy=cm.overall_accuracy, kappa=cm.kappa,
                   kappa_defined=cm.kappa_defined, producer_accuracy=cm.producer_accuracy(),
                   user_accuracy=cm.user_accuracy())
