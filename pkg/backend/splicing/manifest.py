"""
Run manifests: what a command ran with and what it produced, written as
JSON next to the outputs.
"""

import json
import platform
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

import torch

from utils.errors import SpliceIOError
from utils.image_io import file_sha256


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    output_kinds: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    metrics: Dict[str, Any] = field(default_factory=dict)
    environment: Dict[str, str] = field(default_factory=dict)
    started_at: str = ""
    exit_code: Optional[int] = None
    error: str = ""

    def __post_init__(self):
        self.started_at = self.started_at or datetime.now(timezone.utc).isoformat()
        self.environment = self.environment or {
            "python": platform.python_version(),
            "torch": torch.__version__,
        }

    def record_input(self, path) -> str:
        """Hash an input file; the digest makes re-runs checkable"""
        path = Path(path)
        self.inputs[str(path)] = file_sha256(path) if path.is_file() else ""
        return self.inputs[str(path)]

    def record_output(self, name: str, path, kind: str = "other"):
        self.outputs[name] = str(path)
        self.output_kinds[name] = kind

    @contextmanager
    def timed(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(time.perf_counter() - start, 6)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def write(self, path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str) + "\n")
        except OSError as exc:
            raise SpliceIOError(f"cannot write manifest {path}: {exc}") from exc
        return path
