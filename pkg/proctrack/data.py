"""Corpus loaders, gold span grounding and the prediction dump format."""

from __future__ import annotations

import json
import logging
import os
import random
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .constants import (
    COOKING_SPLIT_TEMPLATE,
    COOKING_VOCAB_FILE,
    DEFAULT_SEED,
    NUM_COOKING_LOCATIONS,
    PROPARA_SPLIT_TEMPLATE,
    SPLITS,
    Action,
    AttributeKind,
)
from .errors import (
    EmptyAfterFilter,
    MissingSplit,
    ParseError,
    UngroundableSpan,
    UnknownClassId,
)
from .formalism import (
    AttributeValue,
    EntityRef,
    SpanLocation,
    StateGrid,
    TransitionSeq,
    derive_transitions,
    normalize_span,
)

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"\w+(?:[-']\w+)*|[^\w\s]")

PROMPT_TAG = "PROMPT"
PARTICIPANTS_TAG = "participants"
DUMP_COLUMNS = 6


def tokenize(text: str) -> tuple[str, ...]:
    """Whitespace and punctuation split; offsets in every span location refer to these tokens."""
    return tuple(_TOKEN.findall(text))


def write_text_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


@dataclass(frozen=True, slots=True)
class ProcessDocument:
    process_id: str
    sentences: tuple[tuple[str, ...], ...]
    entities: tuple[EntityRef, ...]
    gold: StateGrid | None = None
    texts: tuple[str, ...] = ()
    prompt: str = ""

    def __post_init__(self) -> None:
        if not self.sentences:
            raise ValueError(f"Process {self.process_id} has no sentences")
        for idx, sentence in enumerate(self.sentences):
            if not sentence:
                raise ValueError(f"Process {self.process_id} sentence {idx} is empty")
        if self.texts and len(self.texts) != len(self.sentences):
            raise ValueError(f"Process {self.process_id} has {len(self.texts)} texts for {len(self.sentences)} sentences")
        if self.gold is not None:
            if self.gold.num_steps != len(self.sentences):
                raise ValueError(
                    f"Process {self.process_id} gold covers {self.gold.num_steps} steps, "
                    f"text has {len(self.sentences)} sentences"
                )
            if self.gold.entities != self.entities:
                raise ValueError(f"Process {self.process_id} gold entities differ from the document's")

    @property
    def num_steps(self) -> int:
        return len(self.sentences)

    def sentence_text(self, idx: int) -> str:
        return self.texts[idx] if self.texts else " ".join(self.sentences[idx])


@dataclass(frozen=True, slots=True)
class RecipeDocument:
    recipe_id: str
    sentences: tuple[tuple[str, ...], ...]
    ingredients: tuple[EntityRef, ...]
    gold_locations: tuple[tuple[int, ...], ...]
    texts: tuple[str, ...] = ()
    vocab_size: int = NUM_COOKING_LOCATIONS

    def __post_init__(self) -> None:
        if not self.sentences or any(not sentence for sentence in self.sentences):
            raise ValueError(f"Recipe {self.recipe_id} has an empty step")
        if len(self.gold_locations) != len(self.ingredients):
            raise ValueError(f"Recipe {self.recipe_id} needs one location row per ingredient")
        for ingredient, row in zip(self.ingredients, self.gold_locations):
            if len(row) != len(self.sentences) + 1:
                raise ValueError(
                    f"Recipe {self.recipe_id} ingredient {ingredient.name!r} has {len(row)} locations, "
                    f"expected {len(self.sentences) + 1}"
                )
            for class_id in row:
                if not 0 <= class_id < self.vocab_size:
                    raise UnknownClassId(f"Location id {class_id} outside 0..{self.vocab_size - 1}")

    @property
    def process_id(self) -> str:
        return self.recipe_id

    @property
    def entities(self) -> tuple[EntityRef, ...]:
        return self.ingredients

    @property
    def num_steps(self) -> int:
        return len(self.sentences)

    def location(self, ingredient: EntityRef, step: int) -> int:
        return self.gold_locations[self.ingredients.index(ingredient)][step]

    def has_location_change(self) -> bool:
        return any(row[k] != row[k - 1] for row in self.gold_locations for k in range(1, len(row)))

    @property
    def gold(self) -> StateGrid:
        """Categorical locations as a grid of SPAN values named by class id."""
        columns = [[AttributeValue.span(str(class_id)) for class_id in row] for row in self.gold_locations]
        return StateGrid.build(self.ingredients, columns, self.num_steps)


@dataclass(frozen=True, slots=True)
class DumpRow:
    process_id: str
    step: int
    entity: str
    action: Action
    before: str
    after: str

    def to_line(self) -> str:
        return "\t".join([self.process_id, str(self.step), self.entity, self.action.name, self.before, self.after])


def _split_file(path: str | Path, split: str, template: str) -> Path:
    if split not in SPLITS:
        raise ValueError(f"Unknown split {split!r}; expected one of {', '.join(SPLITS)}")
    root = Path(path)
    target = root / template.format(split=split) if root.is_dir() or not root.suffix else root
    if not target.is_file():
        raise MissingSplit(f"No {split} split at {target}")
    return target


def _blocks(path: Path) -> Iterator[list[tuple[int, list[str]]]]:
    block: list[tuple[int, list[str]]] = []
    with path.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                if block:
                    yield block
                    block = []
                continue
            block.append((lineno, line.split("\t")))
    if block:
        yield block


def _parse_paragraph(path: Path, block: list[tuple[int, list[str]]]) -> ProcessDocument:
    first_line = block[0][0]
    process_id = block[0][1][0].strip()
    if not process_id:
        raise ParseError(path, first_line, "empty process id")

    rows: list[tuple[int, str, str, list[str]]] = []
    for lineno, fields in block:
        if len(fields) < 2:
            raise ParseError(path, lineno, "expected at least process id and row tag")
        if fields[0].strip() != process_id:
            raise ParseError(path, lineno, f"process id {fields[0]!r} inside block of {process_id!r}")
        text = fields[2] if len(fields) > 2 else ""
        rows.append((lineno, fields[1].strip(), text, fields[3:]))

    prompt = ""
    if rows and rows[0][1] == PROMPT_TAG:
        prompt = rows[0][2]
        rows = rows[1:]
    if not rows or rows[0][1] != PARTICIPANTS_TAG:
        raise ParseError(path, first_line, "missing participants row")
    lineno, _, _, names = rows[0]
    names = [name.strip() for name in names]
    if not names:
        raise ParseError(path, lineno, "no participants")
    try:
        entities = tuple(EntityRef(process_id, name, idx) for idx, name in enumerate(names))
    except ValueError as exc:
        raise ParseError(path, lineno, str(exc)) from exc
    if len({entity.name for entity in entities}) != len(entities):
        raise ParseError(path, lineno, "duplicate participant name")

    texts: list[str] = []
    state_rows: list[list[str]] = []
    expected = "state0"
    for lineno, tag, text, cells in rows[1:]:
        if tag != expected:
            raise ParseError(path, lineno, f"expected row {expected!r}, found {tag!r}")
        if tag.startswith("event"):
            if not tokenize(text):
                raise ParseError(path, lineno, "empty sentence")
            texts.append(text.strip())
            expected = f"state{len(texts)}"
            continue
        if len(cells) != len(entities):
            raise ParseError(path, lineno, f"{len(cells)} state cells for {len(entities)} participants")
        if any(not cell.strip() for cell in cells):
            raise ParseError(path, lineno, "empty state cell")
        state_rows.append([cell.strip() for cell in cells])
        expected = f"event{len(texts) + 1}"

    last_line = block[-1][0]
    if not texts:
        raise ParseError(path, last_line, "paragraph has no sentences")
    if len(state_rows) != len(texts) + 1:
        raise ParseError(
            path, last_line, f"{len(texts)} sentences need {len(texts) + 1} state rows, found {len(state_rows)}"
        )

    columns = [[AttributeValue.from_symbol(row[idx]) for row in state_rows] for idx in range(len(entities))]
    gold = StateGrid.build(entities, columns, len(texts))
    return ProcessDocument(
        process_id=process_id,
        sentences=tuple(tokenize(text) for text in texts),
        entities=entities,
        gold=gold,
        texts=tuple(texts),
        prompt=prompt,
    )


def load_propara(path: str | Path, split: str) -> list[ProcessDocument]:
    target = _split_file(path, split, PROPARA_SPLIT_TEMPLATE)
    docs: list[ProcessDocument] = []
    seen: set[str] = set()
    for block in _blocks(target):
        doc = _parse_paragraph(target, block)
        if doc.process_id in seen:
            raise ParseError(target, block[0][0], f"duplicate process id {doc.process_id!r}")
        seen.add(doc.process_id)
        docs.append(doc)
    if docs:
        avg_entities = sum(len(doc.entities) for doc in docs) / len(docs)
        logger.info("Loaded %d %s paragraphs from %s (%.2f entities each)", len(docs), split, target, avg_entities)
    return docs


def write_propara(docs: Iterable[ProcessDocument], path: str | Path) -> None:
    """Serialise documents back to the grid layout load_propara reads."""
    blocks = []
    for doc in docs:
        if doc.gold is None:
            raise ValueError(f"Process {doc.process_id} has no gold grid to write")
        pid = doc.process_id
        lines = []
        if doc.prompt:
            lines.append(f"{pid}\t{PROMPT_TAG}\t{doc.prompt}")
        lines.append("\t".join([pid, PARTICIPANTS_TAG, ""] + [entity.name for entity in doc.entities]))
        for step in range(doc.num_steps + 1):
            if step:
                lines.append(f"{pid}\tevent{step}\t{doc.sentence_text(step - 1)}")
            cells = [column[step].symbol for column in doc.gold.columns]
            lines.append("\t".join([pid, f"state{step}", ""] + cells))
        blocks.append("\n".join(lines))
    write_text_atomic(Path(path), "\n\n".join(blocks) + "\n")


def load_location_vocab(path: str | Path, expected_size: int = NUM_COOKING_LOCATIONS) -> tuple[str, ...]:
    target = Path(path)
    if target.is_dir():
        target = target / COOKING_VOCAB_FILE
    if not target.is_file():
        raise MissingSplit(f"No location vocabulary at {target}")
    names: list[str] = []
    with target.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            name = raw.strip()
            if not name:
                continue
            if name in names:
                raise ParseError(target, lineno, f"duplicate location {name!r}")
            names.append(name)
    if len(names) != expected_size:
        raise ParseError(target, len(names), f"vocabulary has {len(names)} entries, expected {expected_size}")
    return tuple(names)


def _parse_recipe(path: Path, lineno: int, line: str, vocab_size: int) -> RecipeDocument:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(path, lineno, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(record, dict):
        raise ParseError(path, lineno, "record is not an object")
    for key in ("recipe_id", "steps", "ingredients", "locations"):
        if key not in record:
            raise ParseError(path, lineno, f"missing key {key!r}")

    recipe_id = str(record["recipe_id"])
    texts = [str(step).strip() for step in record["steps"]]
    if not texts or any(not tokenize(text) for text in texts):
        raise ParseError(path, lineno, "recipe needs non-empty steps")
    try:
        ingredients = tuple(EntityRef(recipe_id, str(name), idx) for idx, name in enumerate(record["ingredients"]))
    except ValueError as exc:
        raise ParseError(path, lineno, str(exc)) from exc

    locations = record["locations"]
    rows = []
    for ingredient in ingredients:
        row = locations.get(ingredient.name)
        if row is None:
            raise ParseError(path, lineno, f"no locations for ingredient {ingredient.name!r}")
        if len(row) != len(texts) + 1:
            raise ParseError(path, lineno, f"ingredient {ingredient.name!r} has {len(row)} locations for {len(texts)} steps")
        try:
            rows.append(tuple(int(class_id) for class_id in row))
        except (TypeError, ValueError) as exc:
            raise ParseError(path, lineno, f"non-integer location id for {ingredient.name!r}") from exc

    try:
        return RecipeDocument(
            recipe_id=recipe_id,
            sentences=tuple(tokenize(text) for text in texts),
            ingredients=ingredients,
            gold_locations=tuple(rows),
            texts=tuple(texts),
            vocab_size=vocab_size,
        )
    except UnknownClassId as exc:
        raise ParseError(path, lineno, str(exc)) from exc


def load_npn_cooking(
    path: str | Path,
    split: str,
    sample_size: int | None = None,
    seed: int = DEFAULT_SEED,
    vocab_size: int = NUM_COOKING_LOCATIONS,
) -> list[RecipeDocument]:
    target = _split_file(path, split, COOKING_SPLIT_TEMPLATE)
    recipes: list[RecipeDocument] = []
    with target.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if line.strip():
                recipes.append(_parse_recipe(target, lineno, line, vocab_size))

    if split != "train":
        logger.info("Loaded %d %s recipes from %s", len(recipes), split, target)
        return recipes

    changed = sorted((recipe for recipe in recipes if recipe.has_location_change()), key=lambda r: r.recipe_id)
    if not changed:
        raise EmptyAfterFilter(f"No training recipe in {target} has a location change")
    if sample_size is not None:
        if sample_size < 1:
            raise ValueError(f"sample_size must be >= 1: {sample_size}")
        if sample_size < len(changed):
            chosen = random.Random(seed).sample(changed, sample_size)
            changed = sorted(chosen, key=lambda r: r.recipe_id)
        else:
            logger.warning("sample_size %d exceeds the %d eligible recipes; using all", sample_size, len(changed))
    logger.info(
        "Loaded %d training recipes from %s (%d of %d have a location change)",
        len(changed),
        target,
        sum(recipe.has_location_change() for recipe in recipes),
        len(recipes),
    )
    return changed


def _find(tokens: Sequence[str], needle: Sequence[str]) -> int | None:
    width = len(needle)
    for start in range(len(tokens) - width + 1):
        if tuple(tokens[start : start + width]) == tuple(needle):
            return start
    return None


def ground_gold_span(
    doc: ProcessDocument,
    entity: EntityRef,
    step: int,
    gold_value: AttributeValue,
    earliest_sentence: int = 0,
) -> AttributeValue:
    """Locate a gold span inside the step-`step` context (sentences earliest_sentence..step-1).

    NOWHERE and UNKNOWN come back unchanged; the encoding layer maps them to their
    reserved class tokens.
    """
    if not 1 <= step <= doc.num_steps:
        raise ValueError(f"Step out of range for {doc.process_id}: {step}")
    if gold_value.kind != AttributeKind.SPAN:
        return gold_value

    needle = tokenize(normalize_span(gold_value.span_text, strip_articles=True))
    if not needle:
        raise UngroundableSpan(f"{doc.process_id}/{entity.name}: gold span {gold_value.span_text!r} is only articles")

    window = range(step - 1, earliest_sentence - 1, -1)
    for fold in (False, True):
        for sentence in window:
            tokens = doc.sentences[sentence]
            if fold:
                tokens = tuple(token.lower() for token in tokens)
            start = _find(tokens, needle)
            if start is not None:
                return gold_value.with_location(SpanLocation(sentence, start, start + len(needle)))
    raise UngroundableSpan(
        f"{doc.process_id}/{entity.name}: {gold_value.span_text!r} not found in sentences "
        f"{earliest_sentence}..{step - 1}"
    )


def dump_rows(process_id: str, grid: StateGrid, transitions: TransitionSeq) -> list[DumpRow]:
    rows = []
    for entity, column, labels in zip(grid.entities, grid.columns, transitions.rows):
        for step, label in enumerate(labels, start=1):
            rows.append(
                DumpRow(
                    process_id=process_id,
                    step=step,
                    entity=entity.name,
                    action=label.action,
                    before=column[step - 1].symbol,
                    after=column[step].symbol,
                )
            )
    return rows


def gold_dump_rows(docs: Iterable[ProcessDocument | RecipeDocument]) -> list[DumpRow]:
    rows: list[DumpRow] = []
    for doc in docs:
        if doc.gold is None:
            raise ValueError(f"Process {doc.process_id} has no gold grid")
        rows.extend(dump_rows(doc.process_id, doc.gold, derive_transitions(doc.gold)))
    return rows


def write_dump(rows: Iterable[DumpRow], path: str | Path) -> None:
    write_text_atomic(Path(path), "".join(row.to_line() + "\n" for row in rows))


def read_dump(path: str | Path) -> list[DumpRow]:
    target = Path(path)
    if not target.is_file():
        raise MissingSplit(f"No prediction dump at {target}")
    rows: list[DumpRow] = []
    with target.open(encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != DUMP_COLUMNS:
                raise ParseError(target, lineno, f"expected {DUMP_COLUMNS} columns, found {len(fields)}")
            process_id, step, entity, action, before, after = (field.strip() for field in fields)
            try:
                step_num = int(step)
            except ValueError as exc:
                raise ParseError(target, lineno, f"step {step!r} is not an integer") from exc
            if step_num < 1:
                raise ParseError(target, lineno, f"step must be >= 1: {step_num}")
            if action not in Action.__members__:
                raise ParseError(target, lineno, f"unknown action {action!r}")
            if not before or not after:
                raise ParseError(target, lineno, "empty location cell")
            rows.append(DumpRow(process_id, step_num, entity, Action[action], before, after))
    return rows
