"""ProPara document-level and sentence-level scorers and the npn-Cooking location metric.

All scorers compare state grids keyed by process id; entity columns are matched by
name. Transitions are re-derived from the grids, so a dump only has to carry
consistent before/after locations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

from .constants import NUM_COOKING_LOCATIONS, Action, AttributeKind
from .data import DumpRow, ProcessDocument, RecipeDocument
from .errors import CoverageMismatch, UnknownClassId
from .formalism import (
    AttributeValue,
    EntityRef,
    StateGrid,
    derive_transitions,
    normalize_span,
)

Grids = Mapping[str, StateGrid]

CAT2_NOTE = "Cat-2 credits exact step matches only."

EVENTS = ("create", "destroy", "move")
SENTENCE_QUESTIONS = (
    "created",
    "creation_step",
    "creation_location",
    "destroyed",
    "destroy_step",
    "destroy_location",
    "moved",
    "move_step",
    "move_source",
    "move_destination",
)


@dataclass(slots=True)
class QuestionScore:
    precision: float
    recall: float
    f1: float
    predicted: int
    gold: int
    matched: int


@dataclass(slots=True)
class DocLevelReport:
    inputs: QuestionScore
    outputs: QuestionScore
    moves: QuestionScore
    conversions: QuestionScore
    precision: float
    recall: float
    f1: float

    def questions(self) -> dict[str, QuestionScore]:
        return {"inputs": self.inputs, "outputs": self.outputs, "moves": self.moves, "conversions": self.conversions}


@dataclass(slots=True)
class QuestionCount:
    correct: int = 0
    total: int = 0

    def add(self, correct: bool) -> None:
        self.correct += int(correct)
        self.total += 1

    @property
    def score(self) -> float:
        return self.correct / self.total if self.total else 1.0


@dataclass(slots=True)
class SentLevelReport:
    cat1: float
    cat2: float
    cat3: float
    macro: float
    micro: float
    counts: dict[str, QuestionCount] = field(default_factory=dict)
    questions: dict[str, QuestionCount] = field(default_factory=dict)


@dataclass(slots=True)
class CookingReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    predicted_changes: int
    gold_changes: int


def harmonic(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _ratio(matched: int, size: int, other_size: int) -> float:
    # An empty side is perfect only when the other side is empty too.
    if size == 0:
        return 1.0 if other_size == 0 else 0.0
    return matched / size


def score_sets(predicted: set, gold: set) -> QuestionScore:
    matched = len(predicted & gold)
    precision = _ratio(matched, len(predicted), len(gold))
    recall = _ratio(matched, len(gold), len(predicted))
    return QuestionScore(precision, recall, harmonic(precision, recall), len(predicted), len(gold), matched)


def _columns(grid: StateGrid) -> dict[str, tuple[AttributeValue, ...]]:
    return {entity.name: column for entity, column in zip(grid.entities, grid.columns)}


def check_coverage(pred: Grids, gold: Grids) -> None:
    pred_keys = {f"{pid}/{name}": grid.num_steps for pid, grid in pred.items() for name in _columns(grid)}
    gold_keys = {f"{pid}/{name}": grid.num_steps for pid, grid in gold.items() for name in _columns(grid)}
    missing = set(gold_keys) - set(pred_keys)
    extra = set(pred_keys) - set(gold_keys)
    for key in set(pred_keys) & set(gold_keys):
        if pred_keys[key] != gold_keys[key]:
            missing.add(f"{key}@{gold_keys[key]} steps")
            extra.add(f"{key}@{pred_keys[key]} steps")
    if missing or extra:
        raise CoverageMismatch(missing, extra)


def location_key(value: AttributeValue) -> str:
    if value.kind == AttributeKind.SPAN:
        return normalize_span(value.span_text, strip_articles=True)
    return value.symbol


def document_tuples(process_id: str, grid: StateGrid) -> dict[str, set]:
    """Inputs, outputs, moves and conversions of one process."""
    tuples: dict[str, set] = {"inputs": set(), "outputs": set(), "moves": set(), "conversions": set()}
    transitions = derive_transitions(grid)
    for entity, column, row in zip(grid.entities, grid.columns, transitions.rows):
        if column[0].exists and not column[-1].exists:
            tuples["inputs"].add((process_id, entity.name))
        if not column[0].exists and column[-1].exists:
            tuples["outputs"].add((process_id, entity.name))
        for step, label in enumerate(row, start=1):
            if label.action == Action.MOVE:
                tuples["moves"].add(
                    (process_id, entity.name, step, location_key(column[step - 1]), location_key(column[step]))
                )

    for step in range(1, grid.num_steps + 1):
        destroyed = frozenset(
            entity.name for entity in grid.entities if transitions.label(entity, step).action == Action.DESTROY
        )
        created: dict[str, set[str]] = {}
        for entity in grid.entities:
            if transitions.label(entity, step).action == Action.CREATE:
                created.setdefault(location_key(grid.value(entity, step)), set()).add(entity.name)
        if not destroyed or not created:
            continue
        for location, names in created.items():
            tuples["conversions"].add((process_id, step, destroyed, frozenset(names), location))
    return tuples


def eval_document_level(pred: Grids, gold: Grids) -> DocLevelReport:
    check_coverage(pred, gold)
    pred_sets: dict[str, set] = {}
    gold_sets: dict[str, set] = {}
    for pid in gold:
        for question, items in document_tuples(pid, pred[pid]).items():
            pred_sets.setdefault(question, set()).update(items)
        for question, items in document_tuples(pid, gold[pid]).items():
            gold_sets.setdefault(question, set()).update(items)

    scores = {
        question: score_sets(pred_sets.get(question, set()), gold_sets.get(question, set()))
        for question in ("inputs", "outputs", "moves", "conversions")
    }
    precision = sum(score.precision for score in scores.values()) / len(scores)
    recall = sum(score.recall for score in scores.values()) / len(scores)
    return DocLevelReport(**scores, precision=precision, recall=recall, f1=harmonic(precision, recall))


def _event_steps(column: tuple[AttributeValue, ...]) -> dict[str, list[int]]:
    steps: dict[str, list[int]] = {event: [] for event in EVENTS}
    for step in range(1, len(column)):
        before, after = column[step - 1], column[step]
        if not before.exists and after.exists:
            steps["create"].append(step)
        elif before.exists and not after.exists:
            steps["destroy"].append(step)
        elif before.exists and after.exists and not before.same_value(after):
            steps["move"].append(step)
    return steps


def _same_span(pred: AttributeValue, gold: AttributeValue) -> bool:
    return pred.kind == AttributeKind.SPAN and location_key(pred) == location_key(gold)


def eval_sentence_level(pred: Grids, gold: Grids) -> SentLevelReport:
    check_coverage(pred, gold)
    questions = {name: QuestionCount() for name in SENTENCE_QUESTIONS}
    whether = {"create": "created", "destroy": "destroyed", "move": "moved"}
    when = {"create": "creation_step", "destroy": "destroy_step", "move": "move_step"}

    for pid, gold_grid in gold.items():
        pred_columns = _columns(pred[pid])
        for name, gold_column in _columns(gold_grid).items():
            pred_column = pred_columns[name]
            gold_events, pred_events = _event_steps(gold_column), _event_steps(pred_column)
            for event in EVENTS:
                questions[whether[event]].add(bool(gold_events[event]) == bool(pred_events[event]))
                if gold_events[event] and pred_events[event]:
                    for step in gold_events[event]:
                        questions[when[event]].add(step in pred_events[event])
            for step in gold_events["create"]:
                if gold_column[step].kind == AttributeKind.SPAN:
                    questions["creation_location"].add(_same_span(pred_column[step], gold_column[step]))
            for step in gold_events["destroy"]:
                if gold_column[step - 1].kind == AttributeKind.SPAN:
                    questions["destroy_location"].add(_same_span(pred_column[step - 1], gold_column[step - 1]))
            for step in gold_events["move"]:
                if gold_column[step - 1].kind == AttributeKind.SPAN:
                    questions["move_source"].add(_same_span(pred_column[step - 1], gold_column[step - 1]))
                if gold_column[step].kind == AttributeKind.SPAN:
                    questions["move_destination"].add(_same_span(pred_column[step], gold_column[step]))

    categories = {
        "cat1": ("created", "destroyed", "moved"),
        "cat2": ("creation_step", "destroy_step", "move_step"),
        "cat3": ("creation_location", "destroy_location", "move_source", "move_destination"),
    }
    counts = {}
    for category, members in categories.items():
        counts[category] = QuestionCount(
            sum(questions[q].correct for q in members), sum(questions[q].total for q in members)
        )
    macro = sum(count.score for count in counts.values()) / len(counts)
    total = sum(count.total for count in counts.values())
    micro = sum(count.correct for count in counts.values()) / total if total else 1.0
    return SentLevelReport(
        cat1=counts["cat1"].score,
        cat2=counts["cat2"].score,
        cat3=counts["cat3"].score,
        macro=macro,
        micro=micro,
        counts=counts,
        questions=questions,
    )


def _class_ids(pid: str, name: str, column: tuple[AttributeValue, ...], vocab_size: int) -> list[int]:
    ids = []
    for value in column:
        try:
            class_id = int(value.symbol)
        except ValueError as exc:
            raise UnknownClassId(f"{pid}/{name}: {value.symbol!r} is not a location id") from exc
        if not 0 <= class_id < vocab_size:
            raise UnknownClassId(f"{pid}/{name}: location id {class_id} outside 0..{vocab_size - 1}")
        ids.append(class_id)
    return ids


def eval_cooking(pred: Grids, gold: Grids, vocab_size: int = NUM_COOKING_LOCATIONS) -> CookingReport:
    check_coverage(pred, gold)
    pred_events: set[tuple[str, str, int]] = set()
    gold_events: set[tuple[str, str, int]] = set()
    correct = 0
    for pid, gold_grid in gold.items():
        pred_columns = _columns(pred[pid])
        for name, gold_column in _columns(gold_grid).items():
            gold_ids = _class_ids(pid, name, gold_column, vocab_size)
            pred_ids = _class_ids(pid, name, pred_columns[name], vocab_size)
            for step in range(1, len(gold_ids)):
                if pred_ids[step] != pred_ids[step - 1]:
                    pred_events.add((pid, name, step))
                if gold_ids[step] != gold_ids[step - 1]:
                    gold_events.add((pid, name, step))
                    correct += int(pred_ids[step] == gold_ids[step])
    scores = score_sets(pred_events, gold_events)
    accuracy = correct / len(gold_events) if gold_events else 1.0
    return CookingReport(scores.precision, scores.recall, scores.f1, accuracy, len(pred_events), len(gold_events))


def grids_from_dump(rows: Iterable[DumpRow]) -> dict[str, StateGrid]:
    """Rebuild per-process grids from dump rows (before of step 1, then each after)."""
    cells: dict[str, dict[str, dict[int, DumpRow]]] = {}
    for row in rows:
        steps = cells.setdefault(row.process_id, {}).setdefault(row.entity, {})
        if row.step in steps:
            raise ValueError(f"Duplicate dump row for {row.process_id}/{row.entity} step {row.step}")
        steps[row.step] = row

    grids = {}
    for pid, entities in cells.items():
        refs, columns = [], []
        num_steps = None
        for index, (name, steps) in enumerate(entities.items()):
            count = max(steps)
            if sorted(steps) != list(range(1, count + 1)):
                raise ValueError(f"Dump rows for {pid}/{name} do not cover steps 1..{count}")
            if num_steps is not None and count != num_steps:
                raise ValueError(f"Dump rows for {pid} disagree on the step count")
            num_steps = count
            column = [AttributeValue.from_symbol(steps[1].before)]
            for step in range(1, count + 1):
                if step > 1 and steps[step].before != steps[step - 1].after:
                    raise ValueError(f"{pid}/{name} step {step}: before does not match the previous after")
                column.append(AttributeValue.from_symbol(steps[step].after))
            refs.append(EntityRef(pid, name, index))
            columns.append(column)
        grids[pid] = StateGrid.build(refs, columns, num_steps)
    return grids


def gold_grids(docs: Iterable[ProcessDocument | RecipeDocument]) -> dict[str, StateGrid]:
    grids = {}
    for doc in docs:
        if doc.gold is None:
            raise ValueError(f"Process {doc.process_id} has no gold grid")
        grids[doc.process_id] = doc.gold
    return grids


def evaluate_task(task: str, pred: Grids, gold: Grids) -> DocLevelReport | SentLevelReport | CookingReport:
    if task == "document-level":
        return eval_document_level(pred, gold)
    if task == "sentence-level":
        return eval_sentence_level(pred, gold)
    if task == "cooking-location":
        return eval_cooking(pred, gold)
    raise ValueError(f"Unknown task {task!r}")


def headline(report: DocLevelReport | SentLevelReport | CookingReport) -> tuple[str, float]:
    """Metric used for model selection."""
    if isinstance(report, DocLevelReport):
        return "doc_f1", report.f1
    if isinstance(report, SentLevelReport):
        return "sent_macro", report.macro
    return "cooking_f1", report.f1


def metric_values(report: DocLevelReport | SentLevelReport | CookingReport) -> dict[str, float]:
    if isinstance(report, DocLevelReport):
        values = {"precision": report.precision, "recall": report.recall, "f1": report.f1}
        for question, score in report.questions().items():
            values.update(
                {f"{question}_precision": score.precision, f"{question}_recall": score.recall, f"{question}_f1": score.f1}
            )
        return values
    if isinstance(report, SentLevelReport):
        values = {"cat1": report.cat1, "cat2": report.cat2, "cat3": report.cat3, "macro": report.macro, "micro": report.micro}
        values.update({f"q_{name}": count.score for name, count in report.questions.items()})
        return values
    return {key: float(value) for key, value in asdict(report).items()}


def format_report(report: DocLevelReport | SentLevelReport | CookingReport, title: str = "") -> str:
    lines = [title] if title else []
    if isinstance(report, DocLevelReport):
        lines.append(f"{'question':<12} {'P':>7} {'R':>7} {'F1':>7} {'pred':>6} {'gold':>6} {'match':>6}")
        for question, score in report.questions().items():
            lines.append(
                f"{question:<12} {score.precision:7.4f} {score.recall:7.4f} {score.f1:7.4f} "
                f"{score.predicted:6d} {score.gold:6d} {score.matched:6d}"
            )
        lines.append(f"{'average':<12} {report.precision:7.4f} {report.recall:7.4f} {report.f1:7.4f}")
    elif isinstance(report, SentLevelReport):
        lines.append(CAT2_NOTE)
        for name, count in report.questions.items():
            lines.append(f"{name:<20} {count.score:7.4f} ({count.correct}/{count.total})")
        for category in ("cat1", "cat2", "cat3"):
            count = report.counts[category]
            lines.append(f"{category:<20} {count.score:7.4f} ({count.correct}/{count.total})")
        lines.append(f"{'macro':<20} {report.macro:7.4f}")
        lines.append(f"{'micro':<20} {report.micro:7.4f}")
    else:
        lines.append(f"changes: predicted {report.predicted_changes}, gold {report.gold_changes}")
        lines.append(f"P {report.precision:.4f}  R {report.recall:.4f}  F1 {report.f1:.4f}  accuracy {report.accuracy:.4f}")
    return "\n".join(lines) + "\n"
