"""Run configuration: schema, YAML loading and ablation flag names."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Iterable, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .constants import (
    CLASS_SEQ_HIDDEN,
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_LEARNING_RATE,
    DEFAULT_SEED,
    TRANSITION_SEQ_HIDDEN,
)
from .errors import ConfigError

ABLATION_ALIASES = {
    "no_transition_prediction": "no_transition_head",
    "no_attribute_aware_representation": "no_attr_aware_repr",
    "no_sequential_transition": "no_seq_transition",
    "no_sequential_class": "no_seq_class",
}


class AblationFlags(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    no_attr_aware_repr: bool = False
    no_transition_head: bool = False
    no_seq_transition: bool = False
    no_seq_class: bool = False
    no_class_prediction: bool = False
    cls_instead_of_attr_aware: bool = False
    full_context_input: bool = False

    def enabled(self) -> list[str]:
        return [name for name, value in self.model_dump().items() if value]


ABLATION_NAMES = tuple(AblationFlags.model_fields)

# Flags with no counterpart in the categorical recipe heads.
COOKING_INAPPLICABLE_ABLATIONS = frozenset(
    {"no_class_prediction", "no_attr_aware_repr", "cls_instead_of_attr_aware", "full_context_input"}
)


class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    class_prev: float = Field(default=1.0, ge=0.0)
    span_prev: float = Field(default=1.0, ge=0.0)
    class_curr: float = Field(default=1.0, ge=0.0)
    span_curr: float = Field(default=1.0, ge=0.0)
    transition: float = Field(default=1.0, ge=0.0)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dataset: Literal["propara", "npn-cooking"] = "propara"
    task: Literal["document-level", "sentence-level", "cooking-location"] = "document-level"
    data_dir: Path = Path("data/propara")
    output_dir: Path = Path("runs/default")
    encoder: Literal["pretrained", "tiny"] = "pretrained"
    pretrained_path: str | None = None
    max_length: int = Field(default=512, ge=16)

    tiny_hidden: int = Field(default=64, ge=2)
    tiny_layers: int = Field(default=2, ge=1)
    tiny_heads: int = Field(default=4, ge=1)
    tiny_dropout: float = Field(default=0.1, ge=0.0, lt=1.0)

    class_hidden: int = Field(default=CLASS_SEQ_HIDDEN, ge=1)
    transition_hidden: int = Field(default=TRANSITION_SEQ_HIDDEN, ge=1)

    learning_rate: float = Field(default=DEFAULT_LEARNING_RATE, gt=0.0)
    batch_size: int = Field(default=DEFAULT_BATCH_SIZE, ge=1)
    epochs: int = Field(default=DEFAULT_EPOCHS, ge=1)
    seed: int = DEFAULT_SEED
    warmup_ratio: float = Field(default=0.1, ge=0.0, le=1.0)
    weight_decay: float = Field(default=0.01, ge=0.0)
    max_grad_norm: float = Field(default=1.0, gt=0.0)
    sample_size: int | None = Field(default=None, ge=1)

    ablations: AblationFlags = AblationFlags()
    loss_weights: LossWeights = LossWeights()

    @model_validator(mode="after")
    def _check_task(self) -> TrainConfig:
        cooking_task = self.task == "cooking-location"
        if (self.dataset == "npn-cooking") != cooking_task:
            raise ValueError(f"task {self.task!r} does not apply to dataset {self.dataset!r}")
        if self.dataset == "npn-cooking" and self.sample_size is None:
            raise ValueError("sample_size is required for npn-cooking")
        if self.dataset == "npn-cooking":
            unused = sorted(COOKING_INAPPLICABLE_ABLATIONS.intersection(self.ablations.enabled()))
            if unused:
                raise ValueError(f"ablations {', '.join(unused)} do not apply to npn-cooking")
        if self.encoder == "tiny" and self.tiny_hidden % self.tiny_heads:
            raise ValueError("tiny_hidden must be divisible by tiny_heads")
        return self

    def with_ablation(self, name: str) -> TrainConfig:
        flags = self.ablations.model_copy(update={canonical_ablation(name): True})
        try:
            return TrainConfig.model_validate({**self.model_dump(), "ablations": flags.model_dump()})
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc

    def ablation_applies(self, name: str) -> bool:
        """Whether ablation `name` changes anything for this dataset."""
        return self.dataset != "npn-cooking" or canonical_ablation(name) not in COOKING_INAPPLICABLE_ABLATIONS


def canonical_ablation(name: str) -> str:
    canonical = ABLATION_ALIASES.get(name, name)
    if canonical not in ABLATION_NAMES:
        known = ", ".join(sorted((*ABLATION_NAMES, *ABLATION_ALIASES)))
        raise ConfigError(f"Unknown ablation {name!r}; expected one of {known}")
    return canonical


def build_config(values: dict[str, Any], ablate: Iterable[str] = ()) -> TrainConfig:
    merged = dict(values)
    flags = dict(merged.get("ablations") or {})
    for name in ablate:
        flags[canonical_ablation(name)] = True
    if flags:
        merged["ablations"] = flags
    try:
        return TrainConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(
    path: str | Path | None,
    overrides: dict[str, Any] | None = None,
    ablate: Iterable[str] = (),
) -> TrainConfig:
    """YAML mapping merged with non-None overrides, validated once."""
    values: dict[str, Any] = {}
    if path is not None:
        target = Path(path)
        if not target.is_file():
            raise ConfigError(f"Config file not found: {target}")
        try:
            loaded = yaml.safe_load(target.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"Invalid YAML in {target}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{target} must hold a mapping of config keys")
        values.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return build_config(values, ablate)
