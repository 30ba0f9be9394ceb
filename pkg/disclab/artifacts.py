"""
Self-describing run artifacts: CSV with one '#'-prefixed JSON metadata line,
JSON reports, SHA-256 checksums and the run manifest.

Artifacts never contain wall-clock values, so identical run configurations
produce identical bytes; wall time lives only in the manifest.
"""

import csv
import hashlib
import io
import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

import config

logger = logging.getLogger(__name__)


def _clean(value: Any) -> Any:
    """JSON-safe copy: enums to values, numpy scalars to floats, non-finite floats to strings"""
    if isinstance(value, BaseModel):
        return _clean(value.model_dump(mode="json"))
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_clean(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def dumps_json(payload: Any) -> str:
    return json.dumps(_clean(payload), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _format_cell(value: Any) -> str:
    value = _clean(value)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(metadata: Dict[str, Any], columns: Sequence[str], rows: Sequence[Dict[str, Any]]) -> str:
    """'#' + compact sorted JSON metadata, then header and rows"""
    buf = io.StringIO()
    buf.write("# " + json.dumps(_clean(metadata), sort_keys=True, separators=(",", ":")) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class RunManifest(BaseModel):
    schema_version: str = config.SCHEMA_VERSION
    command: str
    parameters: Dict[str, Any]
    seed: Optional[int] = None
    wall_time_s: float = 0.0
    checksums: Dict[str, str] = Field(default_factory=dict)


class ArtifactStore:
    def __init__(self, storage_dir: str = None):
        """
        Initialize artifact store.

        Args:
            storage_dir: Directory for artifacts; relative output paths land here
        """
        self.storage_dir = Path(storage_dir or config.OUTPUT_DIR)

    def _resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and p.parent == Path("."):
            p = self.storage_dir / p
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_text(self, path: str, text: str) -> Dict[str, str]:
        """
        Write an artifact and return {resolved path: sha256}.

        Args:
            path: Bare file names go under the storage directory, others as given
            text: Full artifact contents
        """
        target = self._resolve(path)
        with open(target, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        logger.info("wrote %s (%d bytes)", target, len(text))
        return {str(target): sha256_text(text)}

    def write_csv(
        self,
        path: str,
        metadata: Dict[str, Any],
        columns: Sequence[str],
        rows: Sequence[Dict[str, Any]],
    ) -> Dict[str, str]:
        return self.write_text(path, render_csv(metadata, columns, rows))

    def write_json(self, path: str, payload: Any) -> Dict[str, str]:
        return self.write_text(path, dumps_json(payload))

    def write_manifest(self, artifact_path: str, manifest: RunManifest) -> Dict[str, str]:
        """Manifest sits next to its artifact as <name>.manifest.json"""
        target = Path(artifact_path)
        manifest_path = target.with_name(target.name + ".manifest.json")
        return self.write_text(str(manifest_path), dumps_json(manifest))


# Singleton instance
_artifact_store = None


def get_artifact_store() -> ArtifactStore:
    """Get or create ArtifactStore instance"""
    global _artifact_store
    if _artifact_store is None:
        _artifact_store = ArtifactStore()
    return _artifact_store
