"""Run manifest written next to every command's outputs."""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path
from time import perf_counter
from typing import Any

from pydantic import BaseModel, Field, PrivateAttr

from . import __version__
from .data import write_text_atomic

MANIFEST_NAME = "manifest.json"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest(BaseModel):
    command: str
    config: dict[str, Any] = Field(default_factory=dict)
    seed: int | None = None
    code_version: str = __version__
    ablations: list[dict[str, str]] = Field(default_factory=list)
    inputs: list[str] = Field(default_factory=list)
    outputs: list[str] = Field(default_factory=list)
    started_at: str = Field(default_factory=_now)
    finished_at: str | None = None
    wall_clock_s: float | None = None

    _clock: float = PrivateAttr(default_factory=perf_counter)

    def add_input(self, path: str | Path) -> None:
        self.inputs.append(str(path))

    def add_output(self, path: str | Path) -> None:
        self.outputs.append(str(path))

    def finish(self, directory: str | Path) -> Path:
        """Stamp the end time and write the manifest into directory."""
        self.finished_at = _now()
        self.wall_clock_s = round(perf_counter() - self._clock, 3)
        target = Path(directory) / MANIFEST_NAME
        write_text_atomic(target, json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
        return target


def read_manifest(path: str | Path) -> RunManifest:
    return RunManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))
