#!/usr/bin/env python3
"""
📋 Run Manifest - one record per CLI run, written next to its outputs.

A manifest holds the command, the fully resolved config, the seed, the toolkit
version, timestamps and the output paths, so a run can be repeated from it.
"""

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .errors import FormatError, InputFileError, OutputFileError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seed: Optional[int]
    version: str
    started_at: str = ""
    finished_at: str = ""
    outputs: List[str] = field(default_factory=list)
    system: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.started_at:
            self.started_at = _now()

    def finish(self, outputs: List[Union[str, Path]]) -> "RunManifest":
        self.outputs = [str(p) for p in outputs]
        self.finished_at = _now()
        return self

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization"""
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "outputs": self.outputs,
            "system": self.system,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        """Create RunManifest from dictionary"""
        return cls(
            command=data["command"],
            config=data.get("config", {}),
            seed=data.get("seed"),
            version=data.get("version", ""),
            started_at=data.get("started_at", ""),
            finished_at=data.get("finished_at", ""),
            outputs=list(data.get("outputs", [])),
            system=dict(data.get("system", {})),
        )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def manifest_path_for(out: Union[str, Path]) -> Path:
    """Directories get ``<dir>/manifest.json``; files get ``<file>.manifest.json``"""
    out = Path(out)
    if out.is_dir() or not out.suffix:
        return out / MANIFEST_NAME
    return out.with_name(out.name + "." + MANIFEST_NAME)


def save_manifest(manifest: RunManifest, out: Union[str, Path]) -> Path:
    path = manifest_path_for(out)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest.to_dict(), f, indent=2)
    except OSError as e:
        raise OutputFileError(path, str(e)) from e
    logger.info("wrote run manifest %s", path)
    return path


def load_manifest(path: Union[str, Path]) -> RunManifest:
    path = Path(path)
    if not path.exists():
        raise InputFileError(path, "run manifest not found")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return RunManifest.from_dict(json.load(f))
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(path, f"invalid run manifest: {e}") from e
