"""Shared builders for the test suite."""

from __future__ import annotations

import os
from pathlib import Path

import pytest

from proctrack.config import TrainConfig
from proctrack.formalism import AttributeValue, EntityRef, StateGrid

FIXTURES = Path(__file__).resolve().parent / "fixtures"
PROPARA_FIXTURES = FIXTURES / "propara"
COOKING_FIXTURES = FIXTURES / "npn_cooking"

requires_propara = pytest.mark.skipif(
    not os.environ.get("PROPARA_DIR"), reason="PROPARA_DIR does not point at a local ProPara copy"
)


def make_grid(process_id: str, names: list[str], rows: list[list[str]]) -> StateGrid:
    """Grid from per-step symbol rows: rows[k][i] is entity i at step k."""
    entities = [EntityRef(process_id, name, idx) for idx, name in enumerate(names)]
    columns = [[AttributeValue.from_symbol(row[idx]) for row in rows] for idx in range(len(names))]
    return StateGrid.build(entities, columns)


def tiny_config(output_dir: Path, **overrides) -> TrainConfig:
    values = {
        "encoder": "tiny",
        "data_dir": PROPARA_FIXTURES,
        "output_dir": output_dir,
        "tiny_hidden": 16,
        "tiny_layers": 1,
        "tiny_heads": 2,
        "tiny_dropout": 0.0,
        "class_hidden": 8,
        "transition_hidden": 8,
        "learning_rate": 1e-3,
        "batch_size": 4,
        "epochs": 1,
        "warmup_ratio": 0.0,
    }
    values.update(overrides)
    return TrainConfig(**values)


def cooking_config(output_dir: Path, **overrides) -> TrainConfig:
    values = {
        "dataset": "npn-cooking",
        "task": "cooking-location",
        "data_dir": COOKING_FIXTURES,
        "sample_size": 10,
    }
    values.update(overrides)
    return tiny_config(output_dir, **values)
