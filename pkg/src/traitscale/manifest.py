"""Run manifest: versions, seeds, parameter hashes, stage timings and output hashes."""

import hashlib
import json
from importlib import metadata
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from logging_utils import get_logger
from traitscale import __version__
from validate_report import write_report

logger = get_logger("traitscale.manifest")

PathLike = Union[str, Path]

MANIFEST_FORMAT = 1
RECORDED_PACKAGES = ("numpy", "scipy", "pandas", "scikit-learn", "pydantic")
_CHUNK = 1 << 20


class ManifestError(ValueError):
    """Raised when a manifest is unreadable or does not match the run directory."""


class OutputFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path: str = Field(..., description="POSIX path relative to the run directory")
    sha256: str = Field(..., min_length=64, max_length=64)
    bytes: int = Field(..., ge=0)


class StageRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    status: Literal["ok", "failed", "skipped"]
    parameters_hash: str
    seconds: float = Field(0.0, ge=0.0)
    outputs: List[OutputFile] = Field(default_factory=list)
    error: Optional[str] = None


class Manifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: int = MANIFEST_FORMAT
    traitscale_version: str = __version__
    packages: Dict[str, str] = Field(default_factory=dict)
    seed: int
    n_jobs: int = Field(..., ge=1)
    config_hash: str
    stages: List[StageRecord] = Field(default_factory=list)
    complete: bool = False
    failed_stage: Optional[str] = None

    def stage(self, name: str) -> Optional[StageRecord]:
        return next((s for s in self.stages if s.name == name), None)

    def output_paths(self) -> List[str]:
        return [f.path for s in self.stages for f in s.outputs]


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in RECORDED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(_CHUNK), b""):
            digest.update(chunk)
    return digest.hexdigest()


def hash_outputs(directory: PathLike, root: PathLike) -> List[OutputFile]:
    """Digest of every file below ``directory``, sorted by path relative to ``root``."""
    directory, root = Path(directory), Path(root)
    if not directory.exists():
        return []
    return [OutputFile(path=path.relative_to(root).as_posix(), sha256=sha256_file(path),
                       bytes=path.stat().st_size)
            for path in sorted(directory.rglob("*")) if path.is_file()]


def write_manifest(manifest: Manifest, path: PathLike) -> None:
    write_report(manifest.model_dump(mode="json"), path, "run_manifest")


def read_manifest(path: PathLike) -> Manifest:
    try:
        with open(path, "rt", encoding="utf-8") as f:
            return Manifest.model_validate(json.load(f))
    except FileNotFoundError:
        raise ManifestError(f"no manifest at {path}") from None
    except (json.JSONDecodeError, ValidationError) as e:
        raise ManifestError(f"unreadable manifest {path}: {e}") from None


def verify_manifest(run_dir: PathLike) -> List[str]:
    """Recompute output hashes of a run and list every mismatch.

    Returns:
        One message per missing, altered or unlisted output; empty when the run
        directory matches its manifest.
    """
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir / "manifest.json")
    problems = []
    for stage in manifest.stages:
        listed = {f.path for f in stage.outputs}
        for output in stage.outputs:
            path = run_dir / output.path
            if not path.is_file():
                problems.append(f"{stage.name}: missing {output.path}")
            elif sha256_file(path) != output.sha256:
                problems.append(f"{stage.name}: {output.path} altered")
        if stage.status == "ok":
            for found in hash_outputs(run_dir / stage.name, run_dir):
                if found.path not in listed:
                    problems.append(f"{stage.name}: {found.path} not in manifest")
    if problems:
        logger.warning(f"{len(problems)} manifest mismatches in {run_dir}")
    else:
        logger.info(f"All {len(manifest.output_paths())} outputs of {run_dir} match the manifest")
    return problems


__all__ = [
    "MANIFEST_FORMAT", "Manifest", "ManifestError", "OutputFile", "StageRecord", "hash_outputs",
    "package_versions", "read_manifest", "sha256_file", "verify_manifest", "write_manifest",
]
