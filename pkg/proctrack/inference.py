"""Decode head outputs into consistent state grids and transition sequences."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch

from .constants import MAX_SPAN_TOKENS, MIN_SPAN_SCORE, Action, AttributeKind, StepTag
from .data import DumpRow, dump_rows
from .encoding import Document, ProceduralContext
from .errors import InconsistentTransition, NoValidSpan
from .formalism import (
    AttributeValue,
    EntityRef,
    SpanLocation,
    StateGrid,
    TransitionLabel,
    TransitionSeq,
    apply_transition,
    check_consistency,
    derive_transition,
)
from .heads import AttributeDistribution, HeadOutput
from .model import EntityInstance, ProcessTracker

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class DecodeStats:
    steps: int = 0
    span_fallbacks: int = 0
    overrides: int = 0
    create_on_nowhere: int = 0

    def merge(self, other: DecodeStats) -> None:
        self.steps += other.steps
        self.span_fallbacks += other.span_fallbacks
        self.overrides += other.overrides
        self.create_on_nowhere += other.create_on_nowhere


@dataclass(slots=True)
class EntityTrace:
    entity: EntityRef
    initial: AttributeValue
    attributes: list[AttributeValue]
    transition_probs: np.ndarray | None = None
    prev_dists: list[AttributeDistribution] = field(default_factory=list)
    curr_dists: list[AttributeDistribution] = field(default_factory=list)
    column: list[AttributeValue] = field(default_factory=list)
    row: list[TransitionLabel] = field(default_factory=list)

    @property
    def num_steps(self) -> int:
        return len(self.attributes)


@dataclass(slots=True)
class ProcessPrediction:
    process_id: str
    grid: StateGrid
    transitions: TransitionSeq
    rows: list[DumpRow]
    traces: list[EntityTrace]
    stats: DecodeStats


def best_span(dist: AttributeDistribution, ctx: ProceduralContext, max_tokens: int = MAX_SPAN_TOKENS) -> tuple[int, int, float]:
    """Highest start*end pair inside one sentence, start <= end, at most max_tokens long."""
    if dist.p_start is None:
        raise NoValidSpan("Distribution has no span part")
    best = (-1, -1, 0.0)
    for start, end in ctx.sentence_ranges.values():
        width = end - start
        if width <= 0:
            continue
        scores = np.outer(dist.p_start[start:end], dist.p_end[start:end])
        upper = np.triu(np.ones((width, width), dtype=bool))
        band = upper & ~np.triu(upper, k=max_tokens)
        scores = np.where(band, scores, 0.0)
        i, j = np.unravel_index(int(np.argmax(scores)), scores.shape)
        score = float(scores[i, j])
        if score >= MIN_SPAN_SCORE and score > best[2]:
            best = (start + int(i), start + int(j), score)
    if best[0] < 0:
        raise NoValidSpan(f"No span pair above {MIN_SPAN_SCORE} for {ctx.entity.name} step {ctx.step}")
    return best


def _span_value(ctx: ProceduralContext, start: int, end: int) -> AttributeValue:
    first, last = ctx.word_at(start), ctx.word_at(end)
    text = ctx.span_text(start, end)
    return AttributeValue.span(text, SpanLocation(first[0], first[1], last[1] + 1))


def decode_attribute(
    dist: AttributeDistribution,
    ctx: ProceduralContext,
    use_class: bool = True,
    stats: DecodeStats | None = None,
) -> AttributeValue:
    """Argmax class, then the best in-sentence span when the class is SPAN.

    Without class prediction the two reserved token positions compete with the
    best sentence span and the winner decides the class.
    """
    if use_class:
        kind = AttributeKind(int(np.argmax(dist.p_class)))
        if kind != AttributeKind.SPAN:
            return AttributeValue(kind)
    try:
        start, end, score = best_span(dist, ctx)
    except NoValidSpan as exc:
        if use_class:
            logger.debug("%s; falling back to UNKNOWN", exc)
            if stats is not None:
                stats.span_fallbacks += 1
            return AttributeValue.unknown()
        start, end, score = -1, -1, 0.0
    if not use_class:
        best_kind = AttributeKind.UNKNOWN
        for kind in (AttributeKind.NOWHERE, AttributeKind.UNKNOWN):
            position = ctx.class_position(kind)
            reserved = float(dist.p_start[position] * dist.p_end[position])
            if reserved > score:
                start, end, score = -1, -1, reserved
                best_kind = kind
        if start < 0:
            return AttributeValue(best_kind)
    return _span_value(ctx, start, end)


def decode_location(dist: AttributeDistribution) -> AttributeValue:
    """Categorical (cooking) attribute: the argmax class id as a SPAN value."""
    return AttributeValue.span(str(int(np.argmax(dist.p_class))))


def _proposed_label(action: Action, attribute: AttributeValue) -> TransitionLabel:
    if action in (Action.CREATE, Action.MOVE):
        return TransitionLabel(action, attribute if attribute.exists else None)
    return TransitionLabel(action)


def reconcile(trace: EntityTrace, stats: DecodeStats | None = None) -> tuple[list[AttributeValue], list[TransitionLabel]]:
    """Walk the steps applying predicted transitions, deriving from attributes where they do not apply."""
    if trace.transition_probs is None or len(trace.transition_probs) != trace.num_steps:
        raise ValueError(f"Trace for {trace.entity.name} needs one transition distribution per step")
    value = trace.initial
    column = [value]
    row: list[TransitionLabel] = []
    for step, attribute in enumerate(trace.attributes, start=1):
        action = Action(int(np.argmax(trace.transition_probs[step - 1])))
        label = _proposed_label(action, attribute)
        try:
            value = apply_transition(value, label)
        except InconsistentTransition as exc:
            derived = derive_transition(value, attribute)
            if action == Action.CREATE and not attribute.exists and not value.exists:
                logger.info("%s step %d: CREATE onto NOWHERE attribute, keeping NOWHERE", trace.entity.name, step)
                if stats is not None:
                    stats.create_on_nowhere += 1
            else:
                logger.debug("%s step %d: %s overridden by %s (%s)", trace.entity.name, step, label, derived, exc)
            if stats is not None:
                stats.overrides += 1
            label = derived
            value = apply_transition(value, derived)
        column.append(value)
        row.append(label)
    trace.column, trace.row = column, row
    return column, row


def attributes_only(trace: EntityTrace) -> tuple[list[AttributeValue], list[TransitionLabel]]:
    column = [trace.initial, *trace.attributes]
    row = [derive_transition(column[k - 1], column[k]) for k in range(1, len(column))]
    trace.column, trace.row = column, row
    return column, row


def _instance_traces(
    model: ProcessTracker,
    instances: Sequence[EntityInstance],
    output: HeadOutput,
    stats: DecodeStats,
) -> list[EntityTrace]:
    categorical = model.config.dataset == "npn-cooking"
    use_class = model.heads.config.class_prediction
    num_classes = model.heads.config.num_classes
    transition_probs = None
    if output.transition_logits is not None:
        transition_probs = torch.softmax(output.transition_logits.double(), dim=-1).cpu().numpy()

    traces = []
    offset = 0
    for instance in instances:
        dists: dict[StepTag, list[AttributeDistribution]] = {StepTag.PREV: [], StepTag.CURR: []}
        for idx, ctx in enumerate(instance.contexts):
            n = offset + idx
            for tag in StepTag:
                dists[tag].append(
                    AttributeDistribution.from_logits(
                        output.class_logits[tag][n] if output.class_logits else None,
                        output.start_logits[tag][n, : len(ctx)] if output.start_logits else None,
                        output.end_logits[tag][n, : len(ctx)] if output.end_logits else None,
                        tag,
                        num_classes,
                    )
                )
        if categorical:
            initial = decode_location(dists[StepTag.PREV][0])
            attributes = [decode_location(dist) for dist in dists[StepTag.CURR]]
        else:
            # Step 0 comes from the PREV head of the first context.
            initial = decode_attribute(dists[StepTag.PREV][0], instance.contexts[0], use_class, stats)
            attributes = [
                decode_attribute(dist, ctx, use_class, stats)
                for dist, ctx in zip(dists[StepTag.CURR], instance.contexts)
            ]
        probs = None
        if transition_probs is not None:
            probs = transition_probs[offset : offset + instance.num_steps]
        traces.append(
            EntityTrace(
                entity=instance.entity,
                initial=initial,
                attributes=attributes,
                transition_probs=probs,
                prev_dists=dists[StepTag.PREV],
                curr_dists=dists[StepTag.CURR],
            )
        )
        offset += instance.num_steps
        stats.steps += instance.num_steps
    return traces


def track_process(model: ProcessTracker, doc: Document, task: str | None = None) -> ProcessPrediction:
    task = task or model.config.task
    stats = DecodeStats()
    instances = model.instances([doc])
    model.eval()
    with torch.no_grad():
        output = model(model.collate(instances))
    traces = _instance_traces(model, instances, output, stats)

    attribute_mode = task != "document-level" or output.transition_logits is None
    columns, rows = [], []
    for trace in traces:
        column, row = attributes_only(trace) if attribute_mode else reconcile(trace, stats)
        columns.append(column)
        rows.append(row)

    grid = StateGrid.build(doc.entities, columns, doc.num_steps)
    transitions = TransitionSeq.build(doc.entities, rows, doc.num_steps)
    violations = check_consistency(grid, transitions)
    if violations:
        raise AssertionError(f"Decoded {doc.process_id} has {len(violations)} inconsistent cells")
    return ProcessPrediction(
        process_id=doc.process_id,
        grid=grid,
        transitions=transitions,
        rows=dump_rows(doc.process_id, grid, transitions),
        traces=traces,
        stats=stats,
    )


def track_documents(model: ProcessTracker, docs: Iterable[Document], task: str | None = None) -> list[ProcessPrediction]:
    predictions = []
    totals = DecodeStats()
    for doc in docs:
        prediction = track_process(model, doc, task)
        totals.merge(prediction.stats)
        predictions.append(prediction)
    logger.info(
        "Tracked %d processes (%d entity steps): %d span fallbacks, %d transition overrides, %d CREATE onto NOWHERE",
        len(predictions),
        totals.steps,
        totals.span_fallbacks,
        totals.overrides,
        totals.create_on_nowhere,
    )
    return predictions
