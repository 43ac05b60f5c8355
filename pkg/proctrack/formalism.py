"""Process representation: entities, attribute values, transitions and their consistency."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .constants import (
    ARTICLES,
    NOWHERE_SYMBOL,
    UNKNOWN_SYMBOL,
    Action,
    AttributeKind,
    ViolationCategory,
)
from .errors import InconsistentTransition, ShapeMismatch

_WHITESPACE = re.compile(r"\s+")


def normalize_span(text: str, strip_articles: bool = False) -> str:
    """Lowercase and collapse whitespace; optionally drop leading articles."""
    words = [word for word in _WHITESPACE.split(text.strip().lower()) if word]
    if strip_articles:
        while words and words[0] in ARTICLES:
            words = words[1:]
    return " ".join(words)


@dataclass(frozen=True, slots=True)
class EntityRef:
    process_id: str
    name: str
    index: int

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError(f"Entity name is empty in process {self.process_id}")
        if self.index < 0:
            raise ValueError(f"Entity index must be >= 0: {self.index}")

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, slots=True)
class SpanLocation:
    sentence: int
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.sentence < 0 or self.start < 0 or self.end <= self.start:
            raise ValueError(f"Invalid span location: {self}")


@dataclass(frozen=True, slots=True)
class AttributeValue:
    kind: AttributeKind
    span_text: str = ""
    span_loc: SpanLocation | None = None

    def __post_init__(self) -> None:
        has_text = bool(self.span_text.strip())
        if self.kind == AttributeKind.SPAN and not has_text:
            raise ValueError("SPAN attribute values need non-empty span text")
        if self.kind != AttributeKind.SPAN and (self.span_text or self.span_loc is not None):
            raise ValueError(f"{self.kind.name} attribute values carry no span")

    @classmethod
    def nowhere(cls) -> AttributeValue:
        return cls(AttributeKind.NOWHERE)

    @classmethod
    def unknown(cls) -> AttributeValue:
        return cls(AttributeKind.UNKNOWN)

    @classmethod
    def span(cls, text: str, loc: SpanLocation | None = None) -> AttributeValue:
        return cls(AttributeKind.SPAN, text.strip(), loc)

    @classmethod
    def from_symbol(cls, symbol: str) -> AttributeValue:
        symbol = symbol.strip()
        if symbol == NOWHERE_SYMBOL:
            return cls.nowhere()
        if symbol == UNKNOWN_SYMBOL:
            return cls.unknown()
        return cls.span(symbol)

    @property
    def exists(self) -> bool:
        return self.kind != AttributeKind.NOWHERE

    @property
    def symbol(self) -> str:
        if self.kind == AttributeKind.NOWHERE:
            return NOWHERE_SYMBOL
        if self.kind == AttributeKind.UNKNOWN:
            return UNKNOWN_SYMBOL
        return self.span_text

    def same_value(self, other: AttributeValue) -> bool:
        """Value equality ignoring span location, case and spacing."""
        if self.kind != other.kind:
            return False
        if self.kind != AttributeKind.SPAN:
            return True
        return normalize_span(self.span_text) == normalize_span(other.span_text)

    def with_location(self, loc: SpanLocation | None) -> AttributeValue:
        if self.kind != AttributeKind.SPAN:
            return self
        return AttributeValue(self.kind, self.span_text, loc)

    def __str__(self) -> str:
        return self.symbol


@dataclass(frozen=True, slots=True)
class TransitionLabel:
    action: Action
    location: AttributeValue | None = None

    def __post_init__(self) -> None:
        if self.action in (Action.DESTROY, Action.NONE) and self.location is not None:
            raise ValueError(f"{self.action.name} carries no location argument")
        if self.location is not None and not self.location.exists:
            raise ValueError(f"{self.action.name} location cannot be non-existence")

    @classmethod
    def create(cls, location: AttributeValue) -> TransitionLabel:
        return cls(Action.CREATE, location)

    @classmethod
    def move(cls, location: AttributeValue) -> TransitionLabel:
        return cls(Action.MOVE, location)

    @classmethod
    def destroy(cls) -> TransitionLabel:
        return cls(Action.DESTROY)

    @classmethod
    def none(cls) -> TransitionLabel:
        return cls(Action.NONE)

    def matches(self, other: TransitionLabel) -> bool:
        if self.action != other.action:
            return False
        if self.location is None or other.location is None:
            return self.location is None and other.location is None
        return self.location.same_value(other.location)

    def __str__(self) -> str:
        if self.location is None:
            return self.action.name
        return f"{self.action.name}({self.location.symbol})"


@dataclass(frozen=True, slots=True)
class StateGrid:
    """Attribute values per entity for steps 0..num_steps (step 0 is the pre-process state)."""

    entities: tuple[EntityRef, ...]
    num_steps: int
    columns: tuple[tuple[AttributeValue, ...], ...]

    def __post_init__(self) -> None:
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1: {self.num_steps}")
        _check_entities(self.entities)
        if len(self.columns) != len(self.entities):
            raise ValueError("StateGrid needs one column per entity")
        for entity, column in zip(self.entities, self.columns):
            if len(column) != self.num_steps + 1:
                raise ValueError(
                    f"Column for {entity.name!r} has {len(column)} cells, expected {self.num_steps + 1}"
                )

    @classmethod
    def build(
        cls,
        entities: Sequence[EntityRef],
        columns: Sequence[Sequence[AttributeValue]],
        num_steps: int | None = None,
    ) -> StateGrid:
        if num_steps is None:
            if not columns:
                raise ValueError("num_steps is required for a grid without entities")
            num_steps = len(columns[0]) - 1
        return cls(tuple(entities), num_steps, tuple(tuple(column) for column in columns))

    def column(self, entity: EntityRef) -> tuple[AttributeValue, ...]:
        return self.columns[_position(self.entities, entity)]

    def value(self, entity: EntityRef, step: int) -> AttributeValue:
        if not 0 <= step <= self.num_steps:
            raise IndexError(f"Step out of range: {step}")
        return self.column(entity)[step]

    def entity_named(self, name: str) -> EntityRef:
        for entity in self.entities:
            if entity.name == name:
                return entity
        raise KeyError(name)


@dataclass(frozen=True, slots=True)
class TransitionSeq:
    """Transition labels per entity for steps 1..num_steps."""

    entities: tuple[EntityRef, ...]
    num_steps: int
    rows: tuple[tuple[TransitionLabel, ...], ...]

    def __post_init__(self) -> None:
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1: {self.num_steps}")
        _check_entities(self.entities)
        if len(self.rows) != len(self.entities):
            raise ValueError("TransitionSeq needs one row per entity")
        for entity, row in zip(self.entities, self.rows):
            if len(row) != self.num_steps:
                raise ValueError(f"Row for {entity.name!r} has {len(row)} labels, expected {self.num_steps}")

    @classmethod
    def build(
        cls,
        entities: Sequence[EntityRef],
        rows: Sequence[Sequence[TransitionLabel]],
        num_steps: int | None = None,
    ) -> TransitionSeq:
        if num_steps is None:
            if not rows:
                raise ValueError("num_steps is required for a sequence without entities")
            num_steps = len(rows[0])
        return cls(tuple(entities), num_steps, tuple(tuple(row) for row in rows))

    def row(self, entity: EntityRef) -> tuple[TransitionLabel, ...]:
        return self.rows[_position(self.entities, entity)]

    def label(self, entity: EntityRef, step: int) -> TransitionLabel:
        if not 1 <= step <= self.num_steps:
            raise IndexError(f"Step out of range: {step}")
        return self.row(entity)[step - 1]


@dataclass(frozen=True, slots=True)
class Violation:
    category: ViolationCategory
    entity: EntityRef
    step: int
    predicted: TransitionLabel
    expected: TransitionLabel
    reason: str


def _check_entities(entities: tuple[EntityRef, ...]) -> None:
    indices = [entity.index for entity in entities]
    if len(set(indices)) != len(indices):
        raise ValueError(f"Duplicate entity index in {indices}")


def _position(entities: tuple[EntityRef, ...], entity: EntityRef) -> int:
    try:
        return entities.index(entity)
    except ValueError as exc:
        raise KeyError(f"Unknown entity: {entity.name}") from exc


def derive_transition(prev: AttributeValue, curr: AttributeValue) -> TransitionLabel:
    if not prev.exists:
        return TransitionLabel.none() if not curr.exists else TransitionLabel.create(curr)
    if not curr.exists:
        return TransitionLabel.destroy()
    if prev.same_value(curr):
        return TransitionLabel.none()
    # UNKNOWN <-> SPAN counts as a move to or from an unknown place.
    return TransitionLabel.move(curr)


def derive_transitions(grid: StateGrid) -> TransitionSeq:
    rows = [
        tuple(derive_transition(column[k - 1], column[k]) for k in range(1, grid.num_steps + 1))
        for column in grid.columns
    ]
    return TransitionSeq.build(grid.entities, rows, grid.num_steps)


def apply_transition(prev: AttributeValue, transition: TransitionLabel) -> AttributeValue:
    action = transition.action
    if action == Action.NONE:
        return prev
    if action == Action.DESTROY:
        if not prev.exists:
            raise InconsistentTransition("DESTROY applied to an entity that does not exist")
        return AttributeValue.nowhere()

    location = transition.location
    if location is None:
        raise InconsistentTransition(f"{action.name} carries no location to apply")
    if action == Action.CREATE:
        if prev.exists:
            raise InconsistentTransition(f"CREATE applied to an entity that already exists at {prev.symbol!r}")
        return location

    if not prev.exists:
        raise InconsistentTransition("MOVE applied to an entity that does not exist")
    if prev.same_value(location):
        raise InconsistentTransition(f"MOVE does not change the location {prev.symbol!r}")
    return location


def replay(initial: Sequence[AttributeValue], transitions: TransitionSeq) -> StateGrid:
    """Fold apply_transition over each row, starting from the given step-0 values."""
    entities = transitions.entities
    if len(initial) != len(entities):
        raise ShapeMismatch("replay needs one initial value per entity")
    columns = []
    for entity, start in zip(entities, initial):
        column = [start]
        for label in transitions.row(entity):
            column.append(apply_transition(column[-1], label))
        columns.append(column)
    return StateGrid.build(entities, columns, transitions.num_steps)


_CATEGORY_BY_ACTION = {
    Action.CREATE: ViolationCategory.CREATION,
    Action.MOVE: ViolationCategory.MOVE,
    Action.DESTROY: ViolationCategory.DESTROY,
}


def _classify(
    prev: AttributeValue,
    curr: AttributeValue,
    predicted: TransitionLabel,
    expected: TransitionLabel,
) -> tuple[ViolationCategory, str]:
    action = predicted.action
    if action == Action.CREATE:
        if prev.exists:
            return ViolationCategory.CREATION, "entity already exists before the step"
        if not curr.exists:
            return ViolationCategory.CREATION, "attribute after the step shows non-existence"
        return ViolationCategory.CREATION, "created location differs from the attribute"
    if action == Action.MOVE:
        if not prev.exists or not curr.exists:
            return ViolationCategory.MOVE, "move refers to a non-existence case"
        if prev.same_value(curr):
            return ViolationCategory.MOVE, "attribute unchanged from the previous step"
        return ViolationCategory.MOVE, "moved location differs from the attribute"
    if action == Action.DESTROY:
        if not prev.exists:
            return ViolationCategory.DESTROY, "attribute before the step is already non-existence"
        return ViolationCategory.DESTROY, "attribute after the step still exists"
    return _CATEGORY_BY_ACTION[expected.action], "attribute changed without a transition"


def check_consistency(grid: StateGrid, transitions: TransitionSeq) -> list[Violation]:
    if grid.entities != transitions.entities or grid.num_steps != transitions.num_steps:
        raise ShapeMismatch(
            f"Grid covers {len(grid.entities)} entities x {grid.num_steps} steps, "
            f"transitions cover {len(transitions.entities)} x {transitions.num_steps}"
        )

    violations: list[Violation] = []
    for entity, column, row in zip(grid.entities, grid.columns, transitions.rows):
        for step in range(1, grid.num_steps + 1):
            prev, curr = column[step - 1], column[step]
            predicted = row[step - 1]
            expected = derive_transition(prev, curr)
            if predicted.matches(expected):
                continue
            category, reason = _classify(prev, curr, predicted, expected)
            violations.append(
                Violation(
                    category=category,
                    entity=entity,
                    step=step,
                    predicted=predicted,
                    expected=expected,
                    reason=reason,
                )
            )
    return violations


def count_violations(violations: Iterable[Violation]) -> dict[ViolationCategory, int]:
    counts = {category: 0 for category in ViolationCategory}
    for violation in violations:
        counts[violation.category] += 1
    return counts
