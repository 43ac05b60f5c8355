import logging
from dataclasses import replace

import numpy as np
import pytest

from conftest import COOKING_FIXTURES, PROPARA_FIXTURES, cooking_config, tiny_config
from proctrack.constants import Action, AttributeKind, StepTag
from proctrack.data import load_npn_cooking, load_propara
from proctrack.encoding import WordVocab, build_context
from proctrack.errors import InconsistentTransition, NoValidSpan
from proctrack.formalism import (
    AttributeValue,
    EntityRef,
    StateGrid,
    TransitionLabel,
    TransitionSeq,
    apply_transition,
    check_consistency,
    derive_transitions,
)
from proctrack.heads import AttributeDistribution
from proctrack.inference import (
    DecodeStats,
    EntityTrace,
    best_span,
    decode_attribute,
    decode_location,
    reconcile,
    track_documents,
    track_process,
)
from proctrack.model import ProcessTracker

ENTITY = EntityRef("p", "water", 0)


def _context():
    docs = load_propara(PROPARA_FIXTURES, "train")
    return build_context(docs[0], docs[0].entities[0], 2, WordVocab.from_documents(docs))


def _peaked(length: int, position: int, mass: float = 0.9) -> np.ndarray:
    probs = np.full(length, (1.0 - mass) / (length - 1))
    probs[position] = mass
    return probs


def _dist(ctx, start: int, end: int, p_class=(0.0, 0.0, 1.0)) -> AttributeDistribution:
    return AttributeDistribution(np.array(p_class), _peaked(len(ctx), start), _peaked(len(ctx), end), StepTag.CURR)


def _probs(*actions: Action) -> np.ndarray:
    probs = np.full((len(actions), 4), 0.1)
    for row, action in enumerate(actions):
        probs[row, action] = 0.7
    return probs


def test_best_span_picks_the_peaked_pair() -> None:
    ctx = _context()
    start, end, score = best_span(_dist(ctx, 20, 20), ctx)
    assert (start, end) == (20, 20)
    assert score == pytest.approx(0.81)
    assert ctx.span_text(start, end) == "leaf"


def test_best_span_stays_inside_one_sentence_and_width() -> None:
    ctx = _context()

    start, end, _ = best_span(_dist(ctx, 13, 17), ctx)
    assert ctx.word_at(start)[0] == ctx.word_at(end)[0]

    start, end, _ = best_span(_dist(ctx, 15, 21), ctx, max_tokens=3)
    assert start <= end < start + 3


def test_decode_attribute_follows_the_class_head() -> None:
    ctx = _context()
    assert decode_attribute(_dist(ctx, 20, 20, (0.7, 0.2, 0.1)), ctx) == AttributeValue.nowhere()
    assert decode_attribute(_dist(ctx, 20, 20, (0.1, 0.7, 0.2)), ctx) == AttributeValue.unknown()

    value = decode_attribute(_dist(ctx, 20, 20), ctx)
    assert value.kind == AttributeKind.SPAN
    assert value.span_text == "leaf"
    assert value.span_loc.sentence == 1


def test_span_without_valid_pair_falls_back_to_unknown() -> None:
    ctx = _context()
    on_query = np.zeros(len(ctx))
    on_query[2] = 1.0
    dist = AttributeDistribution(np.array([0.0, 0.0, 1.0]), on_query, on_query.copy(), StepTag.CURR)
    stats = DecodeStats()

    with pytest.raises(NoValidSpan):
        best_span(dist, ctx)
    assert decode_attribute(dist, ctx, stats=stats) == AttributeValue.unknown()
    assert stats.span_fallbacks == 1


def test_reserved_positions_compete_without_class_prediction() -> None:
    ctx = _context()
    nowhere = ctx.class_position(AttributeKind.NOWHERE)
    unknown = ctx.class_position(AttributeKind.UNKNOWN)
    uniform = (1 / 3, 1 / 3, 1 / 3)

    assert decode_attribute(_dist(ctx, nowhere, nowhere, uniform), ctx, use_class=False) == AttributeValue.nowhere()
    assert decode_attribute(_dist(ctx, unknown, unknown, uniform), ctx, use_class=False) == AttributeValue.unknown()
    assert decode_attribute(_dist(ctx, 20, 20, uniform), ctx, use_class=False).span_text == "leaf"


def test_decode_location_uses_the_class_id() -> None:
    p_class = np.full(243, 0.5 / 242)
    p_class[17] = 0.5
    dist = AttributeDistribution(p_class, None, None, StepTag.CURR)
    assert decode_location(dist) == AttributeValue.span("17")


def test_reconcile_keeps_consistent_transitions() -> None:
    soil, roots, leaf = (AttributeValue.span(text) for text in ("soil", "roots", "leaf"))
    trace = EntityTrace(ENTITY, soil, [roots, leaf, AttributeValue.nowhere()], _probs(Action.MOVE, Action.MOVE, Action.DESTROY))
    stats = DecodeStats()

    column, row = reconcile(trace, stats)

    assert [value.symbol for value in column] == ["soil", "roots", "leaf", "-"]
    assert [label.action for label in row] == [Action.MOVE, Action.MOVE, Action.DESTROY]
    assert stats.overrides == 0


def test_reconcile_prefers_an_applicable_transition_over_the_attribute() -> None:
    trace = EntityTrace(ENTITY, AttributeValue.span("a"), [AttributeValue.span("b")], _probs(Action.NONE))
    column, row = reconcile(trace)
    assert column[1].symbol == "a"
    assert row[0].action == Action.NONE


def test_reconcile_overrides_inapplicable_transitions() -> None:
    trace = EntityTrace(ENTITY, AttributeValue.nowhere(), [AttributeValue.span("leaf")], _probs(Action.MOVE))
    stats = DecodeStats()

    column, row = reconcile(trace, stats)

    assert row[0].action == Action.CREATE
    assert column[1].symbol == "leaf"
    assert stats.overrides == 1


def test_create_onto_nowhere_keeps_nowhere(caplog) -> None:
    trace = EntityTrace(ENTITY, AttributeValue.nowhere(), [AttributeValue.nowhere()], _probs(Action.CREATE))
    stats = DecodeStats()

    with caplog.at_level(logging.INFO, logger="proctrack.inference"):
        column, row = reconcile(trace, stats)

    assert column[1] == AttributeValue.nowhere()
    assert row[0].action == Action.NONE
    assert stats.create_on_nowhere == 1
    assert "CREATE onto NOWHERE" in caplog.text


def test_reconcile_requires_one_distribution_per_step() -> None:
    trace = EntityTrace(ENTITY, AttributeValue.unknown(), [AttributeValue.unknown()] * 2, _probs(Action.NONE))
    with pytest.raises(ValueError):
        reconcile(trace)


def test_random_traces_reconcile_without_violations() -> None:
    rng = np.random.default_rng(11)
    pool = [AttributeValue.nowhere(), AttributeValue.unknown(), AttributeValue.span("soil"), AttributeValue.span("leaf")]
    for _ in range(1000):
        steps = int(rng.integers(1, 7))
        initial = pool[int(rng.integers(len(pool)))]
        attributes = [pool[int(idx)] for idx in rng.integers(len(pool), size=steps)]
        probs = rng.dirichlet(np.ones(4), size=steps)
        trace = EntityTrace(ENTITY, initial, attributes, probs)

        column, row = reconcile(trace)

        grid = StateGrid.build([ENTITY], [column], steps)
        assert check_consistency(grid, TransitionSeq.build([ENTITY], [row], steps)) == []
        for step, label in enumerate(row, start=1):
            action = Action(int(np.argmax(probs[step - 1])))
            attribute = attributes[step - 1]
            location = attribute if action in (Action.CREATE, Action.MOVE) and attribute.exists else None
            try:
                apply_transition(column[step - 1], TransitionLabel(action, location))
            except InconsistentTransition:
                continue
            assert label.action == action


def test_track_process_covers_every_entity_and_step(tmp_path) -> None:
    docs = load_propara(PROPARA_FIXTURES, "dev")
    model = ProcessTracker.build(tiny_config(tmp_path), docs)

    prediction = track_process(model, docs[0])

    assert prediction.grid.entities == docs[0].entities
    assert len(prediction.rows) == len(docs[0].entities) * docs[0].num_steps
    assert check_consistency(prediction.grid, prediction.transitions) == []
    assert prediction.stats.steps == len(prediction.rows)


def test_sentence_level_uses_attributes_only(tmp_path) -> None:
    docs = load_propara(PROPARA_FIXTURES, "dev")
    model = ProcessTracker.build(tiny_config(tmp_path, task="sentence-level"), docs)

    prediction = track_process(model, docs[0])

    for trace in prediction.traces:
        assert trace.column == [trace.initial, *trace.attributes]
    assert prediction.transitions == derive_transitions(prediction.grid)


def test_cooking_predictions_are_class_ids(tmp_path) -> None:
    recipes = load_npn_cooking(COOKING_FIXTURES, "dev")
    model = ProcessTracker.build(cooking_config(tmp_path), recipes)

    predictions = track_documents(model, recipes)

    for row in predictions[0].rows:
        assert row.after.isdigit() and 0 <= int(row.after) < 243


def test_sentence_level_grid_ignores_transition_logits(tmp_path, monkeypatch) -> None:
    docs = load_propara(PROPARA_FIXTURES, "dev")
    model = ProcessTracker.build(tiny_config(tmp_path, task="sentence-level"), docs)
    with_transitions = [track_process(model, doc).grid for doc in docs]

    forward = model.forward
    monkeypatch.setattr(model, "forward", lambda batch: replace(forward(batch), transition_logits=None))
    without_transitions = [track_process(model, doc).grid for doc in docs]

    assert with_transitions == without_transitions
