"""Joint end-to-end training of encoder and heads."""

from __future__ import annotations

import json
import logging
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from time import perf_counter
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch.optim import AdamW
from tqdm import tqdm
from transformers import get_linear_schedule_with_warmup

from .checkpoint import save_checkpoint
from .config import LossWeights, TrainConfig
from .constants import IGNORE_INDEX, StepTag
from .data import RecipeDocument, ground_gold_span, write_text_atomic
from .encoding import Document
from .errors import DivergenceError, TargetMismatch, UngroundableSpan
from .evaluation import evaluate_task, gold_grids, headline
from .formalism import derive_transition
from .heads import HeadOutput
from .inference import track_documents
from .instrumentation import SnapshotThrottle, TrainingSnapshot
from .model import EntityInstance, ProcessTracker

logger = logging.getLogger(__name__)

LOSS_TERMS = ("class_prev", "span_prev", "class_curr", "span_curr", "transition")

# Variants of the ablation table, in report order.
ABLATION_SUITE = (
    ("full", None),
    ("no_attribute_aware_representation", "no_attr_aware_repr"),
    ("no_transition_prediction", "no_transition_head"),
    ("no_sequential_transition", "no_seq_transition"),
    ("no_sequential_class", "no_seq_class"),
    ("no_class_prediction", "no_class_prediction"),
    ("cls_instead_of_attr_aware", "cls_instead_of_attr_aware"),
    ("full_context_input", "full_context_input"),
)


@dataclass(frozen=True, slots=True)
class EntityTargets:
    classes: dict[StepTag, tuple[int, ...]]
    starts: dict[StepTag, tuple[int, ...]]
    ends: dict[StepTag, tuple[int, ...]]
    transitions: tuple[int, ...]
    ungrounded: int = 0


@dataclass(slots=True)
class TargetTensors:
    classes: dict[StepTag, torch.Tensor]
    starts: dict[StepTag, torch.Tensor]
    ends: dict[StepTag, torch.Tensor]
    transitions: torch.Tensor

    @classmethod
    def stack(cls, instances: Sequence[EntityInstance], device: torch.device | str | None = None) -> TargetTensors:
        def gather(pick: Callable[[EntityTargets], tuple[int, ...]]) -> torch.Tensor:
            values = []
            for instance in instances:
                if instance.targets is None:
                    raise TargetMismatch(f"{instance.doc.process_id}/{instance.entity.name} has no targets")
                values.extend(pick(instance.targets))
            return torch.tensor(values, dtype=torch.long, device=device)

        return cls(
            classes={tag: gather(lambda t, tag=tag: t.classes[tag]) for tag in StepTag},
            starts={tag: gather(lambda t, tag=tag: t.starts[tag]) for tag in StepTag},
            ends={tag: gather(lambda t, tag=tag: t.ends[tag]) for tag in StepTag},
            transitions=gather(lambda t: t.transitions),
        )


@dataclass(slots=True)
class LossTerms:
    total: torch.Tensor
    terms: dict[str, torch.Tensor]

    def values(self) -> dict[str, float]:
        return {name: float(value.detach()) for name, value in self.terms.items()}


@dataclass(slots=True)
class EpochMetrics:
    epoch: int
    loss: float
    terms: dict[str, float]
    transition_accuracy: float | None = None
    dev_metric: str | None = None
    dev_value: float | None = None


@dataclass(slots=True)
class FitResult:
    model: ProcessTracker
    history: list[EpochMetrics]
    best_epoch: int
    best_value: float | None
    checkpoint: Path
    metrics_path: Path
    ungrounded: int = 0


@dataclass(slots=True)
class AblationResult:
    variant: str
    flag: str | None
    best_epoch: int
    metric: str | None
    best_value: float | None
    output_dir: Path = field(default_factory=Path)


def set_seed(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.cuda.manual_seed_all(seed)
    torch.backends.cudnn.benchmark = False
    torch.backends.cudnn.deterministic = True


def build_targets(instance: EntityInstance) -> EntityTargets:
    doc, entity = instance.doc, instance.entity
    if doc.gold is None:
        raise TargetMismatch(f"Process {doc.process_id} has no gold grid")
    column = doc.gold.column(entity)
    categorical = isinstance(doc, RecipeDocument)

    classes: dict[StepTag, list[int]] = {tag: [] for tag in StepTag}
    starts: dict[StepTag, list[int]] = {tag: [] for tag in StepTag}
    ends: dict[StepTag, list[int]] = {tag: [] for tag in StepTag}
    transitions = []
    ungrounded = 0
    for step, ctx in enumerate(instance.contexts, start=1):
        for tag, cell in ((StepTag.PREV, step - 1), (StepTag.CURR, step)):
            value = column[cell]
            if categorical:
                classes[tag].append(doc.location(entity, cell))
                starts[tag].append(IGNORE_INDEX)
                ends[tag].append(IGNORE_INDEX)
                continue
            classes[tag].append(int(value.kind))
            try:
                grounded = ground_gold_span(doc, entity, step, value, ctx.earliest_sentence)
                start, end = ctx.target_positions(grounded)
            except UngroundableSpan as exc:
                logger.debug("%s", exc)
                ungrounded += 1
                start = end = IGNORE_INDEX
            starts[tag].append(start)
            ends[tag].append(end)
        transitions.append(int(derive_transition(column[step - 1], column[step]).action))

    freeze = lambda table: {tag: tuple(values) for tag, values in table.items()}  # noqa: E731
    return EntityTargets(freeze(classes), freeze(starts), freeze(ends), tuple(transitions), ungrounded)


def attach_targets(instances: Iterable[EntityInstance]) -> tuple[list[EntityInstance], int]:
    with_targets = [replace(instance, targets=build_targets(instance)) for instance in instances]
    ungrounded = sum(instance.targets.ungrounded for instance in with_targets)
    span_targets = 2 * sum(instance.num_steps for instance in with_targets)
    logger.info(
        "Grounding: %d of %d attribute targets ungroundable, excluded from span loss", ungrounded, span_targets
    )
    return with_targets, ungrounded


def _cross_entropy(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    valid = target != IGNORE_INDEX
    chosen = target[valid]
    if chosen.numel() and (chosen.min() < 0 or chosen.max() >= logits.shape[-1]):
        raise TargetMismatch(f"Target index outside 0..{logits.shape[-1] - 1}")
    if not valid.any():
        return logits.new_zeros(())
    return F.cross_entropy(logits, target, ignore_index=IGNORE_INDEX)


def total_loss(output: HeadOutput, targets: TargetTensors, weights: LossWeights = LossWeights()) -> LossTerms:
    """Weighted sum of the enabled cross-entropy terms; disabled terms are left out."""
    terms: dict[str, torch.Tensor] = {}
    for tag in StepTag:
        suffix = tag.value
        if tag in output.class_logits and getattr(weights, f"class_{suffix}") > 0:
            terms[f"class_{suffix}"] = _cross_entropy(output.class_logits[tag], targets.classes[tag])
        if tag in output.start_logits and getattr(weights, f"span_{suffix}") > 0:
            terms[f"span_{suffix}"] = _cross_entropy(output.start_logits[tag], targets.starts[tag]) + _cross_entropy(
                output.end_logits[tag], targets.ends[tag]
            )
    if output.transition_logits is not None and weights.transition > 0:
        terms["transition"] = _cross_entropy(output.transition_logits, targets.transitions)

    if not terms:
        raise TargetMismatch("Every loss term is disabled")
    total = sum(getattr(weights, name) * value for name, value in terms.items())
    return LossTerms(total, terms)


def transition_hits(output: HeadOutput, targets: TargetTensors) -> tuple[int, int]:
    if output.transition_logits is None:
        return 0, 0
    predicted = output.transition_logits.argmax(dim=-1)
    return int((predicted == targets.transitions).sum()), int(targets.transitions.numel())


def parameter_groups(model: torch.nn.Module, weight_decay: float) -> list[dict]:
    no_decay = ("bias", "LayerNorm.weight", "norm.weight", "norm1.weight", "norm2.weight")
    named = list(model.named_parameters())
    return [
        {"params": [p for n, p in named if not any(nd in n for nd in no_decay)], "weight_decay": weight_decay},
        {"params": [p for n, p in named if any(nd in n for nd in no_decay)], "weight_decay": 0.0},
    ]


def dev_score(model: ProcessTracker, dev_docs: Sequence[Document]) -> tuple[str, float]:
    predictions = track_documents(model, dev_docs, model.config.task)
    report = evaluate_task(
        model.config.task, {p.process_id: p.grid for p in predictions}, gold_grids(dev_docs)
    )
    return headline(report)


def _metric_lines(metrics: EpochMetrics) -> list[str]:
    records = [{"epoch": metrics.epoch, "split": "train", "metric": "loss", "value": metrics.loss}]
    records += [
        {"epoch": metrics.epoch, "split": "train", "metric": name, "value": value} for name, value in metrics.terms.items()
    ]
    if metrics.transition_accuracy is not None:
        records.append(
            {"epoch": metrics.epoch, "split": "train", "metric": "transition_accuracy", "value": metrics.transition_accuracy}
        )
    if metrics.dev_metric is not None:
        records.append({"epoch": metrics.epoch, "split": "dev", "metric": metrics.dev_metric, "value": metrics.dev_value})
    return [json.dumps(record, sort_keys=True) for record in records]


def fit(
    config: TrainConfig,
    train_docs: Sequence[Document],
    dev_docs: Sequence[Document] = (),
    on_snapshot: Callable[[TrainingSnapshot], None] | None = None,
    snapshot_interval_ms: int = 1_000,
) -> FitResult:
    set_seed(config.seed)
    model = ProcessTracker.build(config, train_docs)
    model.to("cuda" if torch.cuda.is_available() else "cpu")

    instances, ungrounded = attach_targets(model.instances(train_docs))
    if not instances:
        raise TargetMismatch("No training instances")

    batch_size = config.batch_size
    steps_per_epoch = math.ceil(len(instances) / batch_size)
    total_steps = steps_per_epoch * config.epochs
    warmup_steps = int(total_steps * config.warmup_ratio)
    optimizer = AdamW(parameter_groups(model, config.weight_decay), lr=config.learning_rate)
    scheduler = get_linear_schedule_with_warmup(optimizer, num_warmup_steps=warmup_steps, num_training_steps=total_steps)

    output_dir = Path(config.output_dir)
    checkpoint_path = output_dir / "best.pt"
    metrics_path = output_dir / "metrics.jsonl"
    logger.info("***** Training %s / %s *****", config.dataset, config.task)
    logger.info("  Entity instances = %d", len(instances))
    logger.info("  Epochs = %d", config.epochs)
    logger.info("  Batch size = %d", batch_size)
    logger.info("  Optimisation steps = %d", total_steps)
    logger.info("  Warmup steps = %d", warmup_steps)
    if config.ablations.enabled():
        logger.info("  Ablations = %s", ", ".join(config.ablations.enabled()))

    throttle = SnapshotThrottle(snapshot_interval_ms, on_snapshot)
    shuffler = random.Random(config.seed)
    history: list[EpochMetrics] = []
    lines: list[str] = []
    best_epoch, best_value, best_key = 0, None, -math.inf
    saved: Path | None = None
    global_step = 0
    started = perf_counter()

    for epoch in range(1, config.epochs + 1):
        model.train()
        order = list(range(len(instances)))
        shuffler.shuffle(order)
        sums: dict[str, float] = defaultdict(float)
        loss_sum, hits, seen = 0.0, 0, 0
        progress = tqdm(range(0, len(order), batch_size), desc=f"epoch {epoch}", unit="batch", leave=False, disable=None)
        for offset in progress:
            chunk = [instances[idx] for idx in order[offset : offset + batch_size]]
            batch = model.collate(chunk)
            targets = TargetTensors.stack(chunk, model.device)
            output = model(batch)
            losses = total_loss(output, targets, config.loss_weights)
            if not torch.isfinite(losses.total):
                raise DivergenceError(f"Loss became non-finite at epoch {epoch} step {global_step}", saved)

            optimizer.zero_grad()
            if losses.total.requires_grad:
                losses.total.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.max_grad_norm)
                optimizer.step()
            scheduler.step()
            global_step += 1

            loss_sum += float(losses.total.detach())
            for name, value in losses.values().items():
                sums[name] += value
            batch_hits, batch_seen = transition_hits(output, targets)
            hits += batch_hits
            seen += batch_seen
            progress.set_postfix(loss=f"{float(losses.total.detach()):.4f}")
            elapsed = perf_counter() - started
            throttle.emit(
                TrainingSnapshot(
                    epoch=epoch,
                    step=global_step,
                    total_steps=total_steps,
                    loss=float(losses.total.detach()),
                    terms=losses.values(),
                    learning_rate=scheduler.get_last_lr()[0],
                    instances_per_s=(global_step * batch_size) / elapsed if elapsed > 0 else 0.0,
                    elapsed_s=elapsed,
                )
            )

        batches = max(1, steps_per_epoch)
        metrics = EpochMetrics(
            epoch=epoch,
            loss=loss_sum / batches,
            terms={name: sums[name] / batches for name in LOSS_TERMS if name in sums},
            transition_accuracy=hits / seen if seen else None,
        )
        if dev_docs:
            metrics.dev_metric, metrics.dev_value = dev_score(model, dev_docs)
            key = metrics.dev_value
        else:
            key = -metrics.loss
        if key > best_key:
            best_key, best_epoch, best_value = key, epoch, metrics.dev_value
            saved = save_checkpoint(model, checkpoint_path, epoch, metrics.dev_value)

        history.append(metrics)
        lines.extend(_metric_lines(metrics))
        write_text_atomic(metrics_path, "\n".join(lines) + "\n")
        terms = " ".join(f"{name}={value:.4f}" for name, value in metrics.terms.items())
        logger.info(
            "Epoch %d: loss %.4f (%s)%s",
            epoch,
            metrics.loss,
            terms,
            f", dev {metrics.dev_metric} {metrics.dev_value:.4f}" if metrics.dev_metric else "",
        )
        throttle.emit(
            TrainingSnapshot(
                epoch=epoch,
                step=global_step,
                total_steps=total_steps,
                loss=metrics.loss,
                terms=metrics.terms,
                learning_rate=scheduler.get_last_lr()[0],
                elapsed_s=perf_counter() - started,
            ),
            force=True,
        )

    logger.info("Best epoch %d%s; checkpoint %s", best_epoch, f" ({best_value:.4f})" if best_value is not None else "", saved)
    return FitResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_value=best_value,
        checkpoint=checkpoint_path,
        metrics_path=metrics_path,
        ungrounded=ungrounded,
    )


def run_ablation_suite(
    config: TrainConfig,
    train_docs: Sequence[Document],
    dev_docs: Sequence[Document],
    variants: Iterable[tuple[str, str | None]] = ABLATION_SUITE,
    on_snapshot: Callable[[TrainingSnapshot], None] | None = None,
) -> list[AblationResult]:
    """Train each variant from the same base config into its own subdirectory."""
    results = []
    for variant, flag in variants:
        if flag is not None and not config.ablation_applies(flag):
            logger.info("Skipping ablation variant %s: no effect on %s", variant, config.dataset)
            continue
        variant_config = config if flag is None else config.with_ablation(flag)
        variant_config = variant_config.model_copy(update={"output_dir": Path(config.output_dir) / variant})
        logger.info("Ablation variant %s", variant)
        result = fit(variant_config, train_docs, dev_docs, on_snapshot)
        metric = result.history[-1].dev_metric if result.history else None
        results.append(
            AblationResult(
                variant=variant,
                flag=flag,
                best_epoch=result.best_epoch,
                metric=metric,
                best_value=result.best_value,
                output_dir=Path(variant_config.output_dir),
            )
        )
    return results
