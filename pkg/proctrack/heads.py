"""Attribute class/span heads, attribute-aware representation and the transition classifier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence, pad_sequence

from .constants import (
    CLASS_SEQ_HIDDEN,
    DISTRIBUTION_TOLERANCE,
    NUM_ACTIONS,
    NUM_ATTRIBUTE_CLASSES,
    TRANSITION_SEQ_HIDDEN,
    AttributeKind,
    StepTag,
)
from .encoding import EncoderOutput, ProceduralContext
from .errors import EmptySequence, MaskMismatch, ModelNumericsError

TRANSITION_INPUTS = ("attribute", "cls", "entity")


@dataclass(frozen=True, slots=True)
class HeadConfig:
    hidden_size: int
    num_classes: int = NUM_ATTRIBUTE_CLASSES
    class_hidden: int = CLASS_SEQ_HIDDEN
    transition_hidden: int = TRANSITION_SEQ_HIDDEN
    span_heads: bool = True
    class_prediction: bool = True
    seq_class: bool = True
    transition_head: bool = True
    seq_transition: bool = True
    # attribute: [R_k, R_a_k, R_a_k-1]; cls: [R_k, cls_k, cls_k-1]; entity: [R_k]
    transition_input: str = "attribute"

    def __post_init__(self) -> None:
        if self.transition_input not in TRANSITION_INPUTS:
            raise ValueError(f"Unknown transition input {self.transition_input!r}")
        if self.transition_input == "attribute" and not self.span_heads:
            raise ValueError("Attribute-aware transition input needs span heads")
        if not self.span_heads and not self.class_prediction:
            raise ValueError("At least one of span heads and class prediction must be enabled")


@dataclass(frozen=True, slots=True)
class AttributeDistribution:
    """Normalised class and span probabilities for one context and one step tag."""

    p_class: np.ndarray
    p_start: np.ndarray | None
    p_end: np.ndarray | None
    step_tag: StepTag

    def __post_init__(self) -> None:
        for name in ("p_class", "p_start", "p_end"):
            probs = getattr(self, name)
            if probs is None:
                continue
            if not np.all(np.isfinite(probs)) or np.any(probs < -DISTRIBUTION_TOLERANCE):
                raise ModelNumericsError(f"{name} holds invalid probabilities")
            if abs(float(probs.sum()) - 1.0) > DISTRIBUTION_TOLERANCE:
                raise ValueError(f"{name} sums to {float(probs.sum()):.6f}")
        if (self.p_start is None) != (self.p_end is None):
            raise ValueError("p_start and p_end come together")
        if self.p_start is not None and self.p_start.shape != self.p_end.shape:
            raise ValueError("p_start and p_end lengths differ")

    @classmethod
    def from_logits(
        cls,
        class_logits: torch.Tensor | None,
        start_logits: torch.Tensor | None,
        end_logits: torch.Tensor | None,
        step_tag: StepTag,
        num_classes: int = NUM_ATTRIBUTE_CLASSES,
    ) -> AttributeDistribution:
        def probs(logits: torch.Tensor) -> np.ndarray:
            if not torch.isfinite(logits).all():
                raise ModelNumericsError("Non-finite head logits")
            return torch.softmax(logits.detach().double(), dim=-1).cpu().numpy()

        p_class = probs(class_logits) if class_logits is not None else np.full(num_classes, 1.0 / num_classes)
        p_start = probs(start_logits) if start_logits is not None else None
        p_end = probs(end_logits) if end_logits is not None else None
        return cls(p_class, p_start, p_end, step_tag)

    def span_scores(self) -> np.ndarray:
        if self.p_start is None:
            raise ValueError("Distribution has no span part")
        product = self.p_start * self.p_end
        return product / product.sum() if product.sum() > 0 else np.full_like(product, 1.0 / len(product))


@dataclass
class HeadOutput:
    class_logits: dict[StepTag, torch.Tensor]
    start_logits: dict[StepTag, torch.Tensor]
    end_logits: dict[StepTag, torch.Tensor]
    transition_logits: torch.Tensor | None
    attribute_repr: torch.Tensor | None


class Nonlinearity(nn.Module):
    """g: one projection to the same width followed by tanh."""

    def __init__(self, width: int) -> None:
        super().__init__()
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.proj(x))


def group_steps(flat: torch.Tensor, lengths: Sequence[int]) -> torch.Tensor:
    """[N, D] flat steps -> [B, T_max, D] padded per-entity sequences."""
    return pad_sequence(list(flat.split(list(lengths))), batch_first=True)


def ungroup_steps(padded: torch.Tensor, lengths: Sequence[int]) -> torch.Tensor:
    return torch.cat([padded[row, :length] for row, length in enumerate(lengths)])


def _check_lengths(lengths: Sequence[int]) -> None:
    if not lengths or any(length < 1 for length in lengths):
        raise EmptySequence(f"Step sequences must be non-empty: {list(lengths)}")


def run_sequence(lstm: nn.LSTM, flat: torch.Tensor, lengths: Sequence[int]) -> torch.Tensor:
    _check_lengths(lengths)
    packed = pack_padded_sequence(
        group_steps(flat, lengths),
        torch.tensor(list(lengths), dtype=torch.long),
        batch_first=True,
        enforce_sorted=False,
    )
    output, _ = lstm(packed)
    padded, _ = pad_packed_sequence(output, batch_first=True)
    return ungroup_steps(padded, lengths)


def class_masks(contexts: Sequence[ProceduralContext], width: int) -> torch.Tensor:
    """[N, 3, width] masks: NOWHERE and UNKNOWN one-hot at their reserved token, SPAN on sentence tokens."""
    masks = torch.zeros((len(contexts), NUM_ATTRIBUTE_CLASSES, width))
    for row, ctx in enumerate(contexts):
        for kind in (AttributeKind.NOWHERE, AttributeKind.UNKNOWN):
            position = ctx.class_token_positions.get(kind)
            if position is None:
                raise MaskMismatch(f"Context for {ctx.entity.name} step {ctx.step} lacks the {kind.name} token")
            masks[row, kind, position] = 1.0
        for start, end in ctx.sentence_ranges.values():
            masks[row, AttributeKind.SPAN, start:end] = 1.0
    return masks


def masked_logits(logits: torch.Tensor, token_mask: torch.Tensor) -> torch.Tensor:
    return logits.masked_fill(token_mask == 0, torch.finfo(logits.dtype).min)


def attribute_aware_repr(
    vectors: torch.Tensor,
    start_logits: torch.Tensor,
    end_logits: torch.Tensor,
    class_probs: torch.Tensor | None,
    masks: torch.Tensor,
) -> torch.Tensor:
    """Probability-weighted token mixture for one step tag.

    vectors [N, L, H]; start/end logits [N, L] already masked; class_probs [N, 3] or
    None for the union of all class masks; masks [N, 3, L].
    """
    if masks.shape[0] != vectors.shape[0] or masks.shape[-1] != vectors.shape[1]:
        raise MaskMismatch(f"Mask shape {tuple(masks.shape)} does not fit vectors {tuple(vectors.shape)}")
    span = torch.softmax(start_logits, dim=-1) * torch.softmax(end_logits, dim=-1)
    span = span / span.sum(dim=-1, keepdim=True).clamp_min(torch.finfo(span.dtype).tiny)
    if class_probs is None:
        token_class = masks.amax(dim=1)
    else:
        token_class = (class_probs.unsqueeze(-1) * masks.to(class_probs.dtype)).sum(dim=1)
    weights = span * token_class.to(span.dtype)
    return torch.einsum("nl,nlh->nh", weights, vectors)


class HeadStack(nn.Module):
    def __init__(self, config: HeadConfig) -> None:
        super().__init__()
        self.config = config
        hidden = config.hidden_size
        tags = [tag.value for tag in StepTag]
        self.g = Nonlinearity(hidden)

        if config.class_prediction:
            class_width = hidden
            if config.seq_class:
                self.class_lstm = nn.LSTM(hidden, config.class_hidden, batch_first=True, bidirectional=True)
                class_width = 2 * config.class_hidden
            self.class_heads = nn.ModuleDict({tag: nn.Linear(class_width, config.num_classes) for tag in tags})
        if config.span_heads:
            self.start_heads = nn.ModuleDict({tag: nn.Linear(hidden, 1) for tag in tags})
            self.end_heads = nn.ModuleDict({tag: nn.Linear(hidden, 1) for tag in tags})

        if config.transition_head:
            step_width = hidden if config.transition_input == "entity" else 3 * hidden
            if config.seq_transition:
                self.transition_lstm = nn.LSTM(
                    step_width, config.transition_hidden, batch_first=True, bidirectional=True
                )
                head_width = hidden + 2 * config.transition_hidden
            else:
                head_width = step_width
            self.transition_g = Nonlinearity(head_width)
            self.transition_head = nn.Linear(head_width, NUM_ACTIONS)

    def class_logits(self, pooled: torch.Tensor, lengths: Sequence[int]) -> dict[StepTag, torch.Tensor]:
        if not self.config.class_prediction:
            return {}
        features = self.g(pooled)
        if self.config.seq_class:
            features = run_sequence(self.class_lstm, features, lengths)
        return {tag: self.class_heads[tag.value](features) for tag in StepTag}

    def span_logits(
        self, vectors: torch.Tensor, token_mask: torch.Tensor
    ) -> tuple[dict[StepTag, torch.Tensor], dict[StepTag, torch.Tensor]]:
        if not self.config.span_heads:
            return {}, {}
        features = self.g(vectors)
        starts = {tag: masked_logits(self.start_heads[tag.value](features).squeeze(-1), token_mask) for tag in StepTag}
        ends = {tag: masked_logits(self.end_heads[tag.value](features).squeeze(-1), token_mask) for tag in StepTag}
        return starts, ends

    def transition_inputs(
        self,
        vectors: torch.Tensor,
        pooled: torch.Tensor,
        lengths: Sequence[int],
        class_logits: dict[StepTag, torch.Tensor],
        start_logits: dict[StepTag, torch.Tensor],
        end_logits: dict[StepTag, torch.Tensor],
        masks: torch.Tensor | None,
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        mode = self.config.transition_input
        if mode == "entity":
            return pooled, None
        if mode == "cls":
            grouped = group_steps(pooled, lengths)
            previous = torch.cat([grouped[:, :1], grouped[:, :-1]], dim=1)
            return torch.cat([pooled, pooled, ungroup_steps(previous, lengths)], dim=-1), None
        if masks is None:
            raise MaskMismatch("Attribute-aware representation needs class masks")
        reprs = []
        for tag in (StepTag.CURR, StepTag.PREV):
            probs = torch.softmax(class_logits[tag], dim=-1) if tag in class_logits else None
            reprs.append(attribute_aware_repr(vectors, start_logits[tag], end_logits[tag], probs, masks))
        paired = torch.cat(reprs, dim=-1)
        return torch.cat([pooled, paired], dim=-1), paired

    def transition_logits(self, pooled: torch.Tensor, steps: torch.Tensor, lengths: Sequence[int]) -> torch.Tensor:
        _check_lengths(lengths)
        if self.config.seq_transition:
            sequence = run_sequence(self.transition_lstm, steps, lengths)
            features = torch.cat([pooled, sequence], dim=-1)
        else:
            features = steps
        return self.transition_head(self.transition_g(features))

    def forward(
        self,
        vectors: torch.Tensor,
        pooled: torch.Tensor,
        token_mask: torch.Tensor,
        lengths: Sequence[int],
        masks: torch.Tensor | None = None,
    ) -> HeadOutput:
        """Heads over N flattened contexts grouped into per-entity runs of `lengths` steps."""
        _check_lengths(lengths)
        if sum(lengths) != vectors.shape[0]:
            raise EmptySequence(f"Lengths cover {sum(lengths)} steps, batch holds {vectors.shape[0]}")
        classes = self.class_logits(pooled, lengths)
        starts, ends = self.span_logits(vectors, token_mask)

        transitions = None
        paired = None
        if self.config.transition_head:
            steps, paired = self.transition_inputs(vectors, pooled, lengths, classes, starts, ends, masks)
            transitions = self.transition_logits(pooled, steps, lengths)

        for logits in (*classes.values(), *([transitions] if transitions is not None else [])):
            if not torch.isfinite(logits).all():
                raise ModelNumericsError("Non-finite head logits")
        return HeadOutput(classes, starts, ends, transitions, paired)

    def predict_attribute(self, enc: EncoderOutput, step_tag: StepTag) -> AttributeDistribution:
        """One context treated as a single-step sequence."""
        vectors = enc.vectors.unsqueeze(0)
        token_mask = torch.ones(vectors.shape[:2], dtype=torch.long, device=vectors.device)
        with torch.no_grad():
            classes = self.class_logits(enc.pooled.unsqueeze(0), [1])
            starts, ends = self.span_logits(vectors, token_mask)
        return AttributeDistribution.from_logits(
            classes[step_tag][0] if classes else None,
            starts[step_tag][0] if starts else None,
            ends[step_tag][0] if ends else None,
            step_tag,
            self.config.num_classes,
        )

    def predict_transitions(self, pooled: torch.Tensor, steps: torch.Tensor) -> np.ndarray:
        """Transition distributions [T, 4] for one entity from per-step pooled vectors and step inputs."""
        if pooled.shape[0] == 0:
            raise EmptySequence("Transition head needs at least one step")
        if not self.config.transition_head:
            raise ValueError("Transition head is disabled")
        with torch.no_grad():
            logits = self.transition_logits(pooled, steps, [pooled.shape[0]])
        return torch.softmax(logits.double(), dim=-1).cpu().numpy()
