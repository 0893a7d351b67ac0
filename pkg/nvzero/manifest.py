"""Run manifests written next to every CLI output."""

import json
import logging
import os
import platform
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import scipy

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    """What was run, with which configuration and seed, and what it produced."""

    command: str
    version: str
    seed: Optional[int] = None
    config_path: Optional[str] = None
    preset: Optional[str] = None
    started: str = field(default_factory=lambda: datetime.now().isoformat(timespec="seconds"))
    duration_s: float = 0.0
    outputs: List[str] = field(default_factory=list)
    parameters: Dict[str, Any] = field(default_factory=dict)
    environment: Dict[str, str] = field(default_factory=lambda: {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    })

    def add_output(self, path: Path) -> None:
        self.outputs.append(Path(path).name)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def write_json_atomic(data: Dict[str, Any], path: Path) -> Path:
    """Write JSON through a temporary file in the same directory and rename it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True, default=str)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def write_manifest(manifest: RunManifest, out_dir: Path) -> Path:
    path = write_json_atomic(manifest.to_dict(), Path(out_dir) / MANIFEST_NAME)
    logger.info(f"Wrote manifest {path}")
    return path


def read_manifest(path: Path) -> RunManifest:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return RunManifest(**data)
