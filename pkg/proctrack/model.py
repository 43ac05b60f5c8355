"""Encoder and heads assembled into one trainable tracker."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import torch
from torch import nn

from .constants import NUM_COOKING_LOCATIONS
from .encoding import (
    ContextEncoder,
    ContextTokenizer,
    Document,
    ProceduralContext,
    WordVocab,
    build_backend,
    build_context,
    pad_contexts,
)
from .formalism import EntityRef
from .heads import HeadConfig, HeadOutput, HeadStack, class_masks

if TYPE_CHECKING:
    from .config import TrainConfig
    from .training import EntityTargets


@dataclass(frozen=True, slots=True)
class EntityInstance:
    """One (process, entity) pair with its step-1..T contexts."""

    doc: Document
    entity: EntityRef
    contexts: tuple[ProceduralContext, ...]
    targets: EntityTargets | None = None

    @property
    def num_steps(self) -> int:
        return len(self.contexts)


@dataclass(slots=True)
class Batch:
    instances: list[EntityInstance]
    input_ids: torch.Tensor
    attention_mask: torch.Tensor
    masks: torch.Tensor
    lengths: list[int]

    @property
    def contexts(self) -> list[ProceduralContext]:
        return [ctx for instance in self.instances for ctx in instance.contexts]

    def to(self, device: torch.device | str) -> Batch:
        self.input_ids = self.input_ids.to(device)
        self.attention_mask = self.attention_mask.to(device)
        self.masks = self.masks.to(device)
        return self


def head_config(config: TrainConfig, hidden_size: int) -> HeadConfig:
    flags = config.ablations
    if config.dataset == "npn-cooking":
        return HeadConfig(
            hidden_size=hidden_size,
            num_classes=NUM_COOKING_LOCATIONS,
            class_hidden=config.class_hidden,
            transition_hidden=config.transition_hidden,
            span_heads=False,
            class_prediction=True,
            seq_class=not flags.no_seq_class,
            transition_head=not flags.no_transition_head,
            seq_transition=not flags.no_seq_transition,
            transition_input="cls",
        )
    if flags.no_attr_aware_repr:
        transition_input = "entity"
    elif flags.cls_instead_of_attr_aware:
        transition_input = "cls"
    else:
        transition_input = "attribute"
    return HeadConfig(
        hidden_size=hidden_size,
        class_hidden=config.class_hidden,
        transition_hidden=config.transition_hidden,
        span_heads=True,
        class_prediction=not flags.no_class_prediction,
        seq_class=not flags.no_seq_class,
        transition_head=not flags.no_transition_head,
        seq_transition=not flags.no_seq_transition,
        transition_input=transition_input,
    )


def make_instances(
    docs: Iterable[Document],
    tokenizer: ContextTokenizer,
    max_length: int,
    full_context: bool = False,
) -> list[EntityInstance]:
    instances = []
    for doc in docs:
        for entity in doc.entities:
            contexts = tuple(
                build_context(doc, entity, step, tokenizer, max_length, full_context)
                for step in range(1, doc.num_steps + 1)
            )
            instances.append(EntityInstance(doc, entity, contexts))
    return instances


def collate(instances: Sequence[EntityInstance], pad_id: int) -> Batch:
    contexts = [ctx for instance in instances for ctx in instance.contexts]
    input_ids, attention = pad_contexts(contexts, pad_id)
    return Batch(
        instances=list(instances),
        input_ids=input_ids,
        attention_mask=attention,
        masks=class_masks(contexts, input_ids.shape[1]),
        lengths=[instance.num_steps for instance in instances],
    )


class ProcessTracker(nn.Module):
    def __init__(self, config: TrainConfig, tokenizer: ContextTokenizer, encoder: ContextEncoder) -> None:
        super().__init__()
        self.config = config
        self.tokenizer = tokenizer
        self.encoder = encoder
        self.heads = HeadStack(head_config(config, encoder.hidden_size))

    @classmethod
    def build(
        cls,
        config: TrainConfig,
        docs: Iterable[Document] = (),
        vocab_tokens: Sequence[str] | None = None,
    ) -> ProcessTracker:
        tokenizer, encoder = build_backend(config, docs, vocab_tokens)
        return cls(config, tokenizer, encoder)

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    @property
    def vocab_tokens(self) -> list[str] | None:
        return list(self.tokenizer.itos) if isinstance(self.tokenizer, WordVocab) else None

    def instances(self, docs: Iterable[Document]) -> list[EntityInstance]:
        return make_instances(
            docs, self.tokenizer, self.config.max_length, self.config.ablations.full_context_input
        )

    def collate(self, instances: Sequence[EntityInstance]) -> Batch:
        return collate(instances, self.tokenizer.pad_id)

    def forward(self, batch: Batch) -> HeadOutput:
        batch.to(self.device)
        vectors, pooled = self.encoder(batch.input_ids, batch.attention_mask)
        return self.heads(vectors, pooled, batch.attention_mask, batch.lengths, batch.masks.to(vectors.dtype))
