"""Paths of a pipeline run directory."""

from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class RunLayout:
    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def config(self) -> Path:
        return self.root / "config.yaml"

    def stage_dir(self, stage: str) -> Path:
        return self.root / stage

    @property
    def imputed(self) -> Path:
        return self.stage_dir("gapfill") / "records_imputed.csv"

    @property
    def provenance(self) -> Path:
        return self.stage_dir("gapfill") / "provenance.csv"

    @property
    def gapfill_report(self) -> Path:
        return self.stage_dir("gapfill") / "gapfill_report.json"

    @property
    def fine_features(self) -> Path:
        return self.stage_dir("features") / "fine"

    @property
    def coarse_features(self) -> Path:
        return self.stage_dir("features") / "coarse"

    @property
    def classes(self) -> Path:
        return self.stage_dir("classify") / "pft_fine.tsr"

    @property
    def abundance(self) -> Path:
        return self.stage_dir("classify") / "abundance.tsr"

    @property
    def classification_report(self) -> Path:
        return self.stage_dir("classify") / "classification_report.json"

    @property
    def classifier(self) -> Path:
        return self.stage_dir("classify") / "classifier.json"

    @property
    def cwm(self) -> Path:
        return self.stage_dir("cwm") / "cwm.csv"

    def model(self, trait: str) -> Path:
        return self.stage_dir("train") / f"{trait}_model.json"

    def eval_report(self, trait: str) -> Path:
        return self.stage_dir("train") / f"{trait}_eval.json"

    def trait_map(self, trait: str) -> Path:
        return self.stage_dir("predict") / f"{trait}.tsr"

    def stderr_map(self, trait: str) -> Path:
        return self.stage_dir("predict") / f"{trait}_stderr.tsr"

    def comparison(self, trait: str) -> Path:
        return self.stage_dir("evaluate") / f"{trait}_comparison.json"

    @property
    def report_dir(self) -> Path:
        return self.stage_dir("report")
