"""Checkpoint archive: encoder and head weights plus the config that produced them."""

from __future__ import annotations

import logging
import os
import pickle
import tempfile
from pathlib import Path

import torch
from pydantic import ValidationError

from .config import TrainConfig
from .errors import CheckpointMismatch
from .model import ProcessTracker

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

# Config keys that change parameter shapes or the head wiring.
ARCHITECTURE_KEYS = (
    "dataset",
    "encoder",
    "tiny_hidden",
    "tiny_layers",
    "tiny_heads",
    "class_hidden",
    "transition_hidden",
    "ablations",
)


def save_checkpoint(model: ProcessTracker, path: str | Path, epoch: int | None = None, metric: float | None = None) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "config": model.config.model_dump(mode="json"),
        "model": model.state_dict(),
        "vocab": model.vocab_tokens,
        "epoch": epoch,
        "metric": metric,
    }
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    os.close(fd)
    try:
        torch.save(payload, tmp)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.info("Saved checkpoint %s (epoch %s)", target, epoch)
    return target


def read_checkpoint_config(path: str | Path) -> tuple[TrainConfig, dict]:
    target = Path(path)
    if not target.is_file():
        raise CheckpointMismatch(f"No checkpoint at {target}")
    try:
        payload = torch.load(target, map_location="cpu", weights_only=False)
    except (pickle.UnpicklingError, RuntimeError, EOFError, ValueError) as exc:
        raise CheckpointMismatch(f"{target} is not a readable checkpoint: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointMismatch(f"{target} is not a format-{FORMAT_VERSION} tracker checkpoint")
    try:
        config = TrainConfig.model_validate(payload["config"])
    except ValidationError as exc:
        raise CheckpointMismatch(f"{target} carries an invalid config: {exc}") from exc
    return config, payload


def architecture_diff(saved: TrainConfig, expected: TrainConfig) -> list[str]:
    return [key for key in ARCHITECTURE_KEYS if getattr(saved, key) != getattr(expected, key)]


def load_checkpoint(path: str | Path, expected: TrainConfig | None = None) -> ProcessTracker:
    config, payload = read_checkpoint_config(path)
    if expected is not None:
        differing = architecture_diff(config, expected)
        if differing:
            raise CheckpointMismatch(f"{path} was trained with different {', '.join(differing)}")
    model = ProcessTracker.build(config, vocab_tokens=payload.get("vocab"))
    try:
        model.load_state_dict(payload["model"])
    except RuntimeError as exc:
        raise CheckpointMismatch(f"{path} weights do not fit the configured model: {exc}") from exc
    model.eval()
    logger.info("Loaded checkpoint %s (epoch %s)", path, payload.get("epoch"))
    return model
