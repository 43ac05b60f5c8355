import random

import pytest

from conftest import make_grid
from proctrack.constants import Action, AttributeKind, ViolationCategory
from proctrack.errors import InconsistentTransition, ShapeMismatch
from proctrack.formalism import (
    AttributeValue,
    EntityRef,
    SpanLocation,
    StateGrid,
    TransitionLabel,
    TransitionSeq,
    apply_transition,
    check_consistency,
    count_violations,
    derive_transition,
    derive_transitions,
    normalize_span,
    replay,
)

LOCATIONS = ["tank", "engine", "alternator", "battery", "Engine", "left side of your heart"]


def _random_value(rng: random.Random) -> AttributeValue:
    roll = rng.random()
    if roll < 0.3:
        return AttributeValue.nowhere()
    if roll < 0.45:
        return AttributeValue.unknown()
    return AttributeValue.span(rng.choice(LOCATIONS))


def _random_grid(rng: random.Random) -> StateGrid:
    num_steps = rng.randint(1, 8)
    entities = [EntityRef("p", f"e{idx}", idx) for idx in range(rng.randint(1, 4))]
    columns = [[_random_value(rng) for _ in range(num_steps + 1)] for _ in entities]
    return StateGrid.build(entities, columns, num_steps)


def test_normalize_span_lowercases_and_strips_articles() -> None:
    assert normalize_span("  The   Left  side ") == "the left side"
    assert normalize_span("The the engine", strip_articles=True) == "engine"
    assert normalize_span("an", strip_articles=True) == ""


def test_attribute_value_invariants() -> None:
    with pytest.raises(ValueError):
        AttributeValue(AttributeKind.SPAN, "   ")
    with pytest.raises(ValueError):
        AttributeValue(AttributeKind.NOWHERE, "tank")
    with pytest.raises(ValueError):
        EntityRef("p", "  ", 0)

    assert AttributeValue.from_symbol("-") == AttributeValue.nowhere()
    assert AttributeValue.from_symbol("?") == AttributeValue.unknown()
    assert AttributeValue.from_symbol("tank").symbol == "tank"
    assert not AttributeValue.nowhere().exists
    assert AttributeValue.unknown().exists


def test_same_value_ignores_location_case_and_spacing() -> None:
    located = AttributeValue.span("Left  side", SpanLocation(0, 2, 4))
    assert located.same_value(AttributeValue.span("left side"))
    assert not located.same_value(AttributeValue.span("right side"))
    assert AttributeValue.unknown().same_value(AttributeValue.unknown())


def test_transition_label_invariants() -> None:
    with pytest.raises(ValueError):
        TransitionLabel(Action.DESTROY, AttributeValue.span("tank"))
    with pytest.raises(ValueError):
        TransitionLabel(Action.MOVE, AttributeValue.nowhere())
    assert str(TransitionLabel.move(AttributeValue.span("engine"))) == "MOVE(engine)"
    assert str(TransitionLabel.none()) == "NONE"


def test_derive_transition_cases() -> None:
    tank, engine = AttributeValue.span("tank"), AttributeValue.span("engine")
    nowhere, unknown = AttributeValue.nowhere(), AttributeValue.unknown()

    assert derive_transition(tank, engine).matches(TransitionLabel.move(engine))
    assert derive_transition(nowhere, AttributeValue.span("alternator")).matches(
        TransitionLabel.create(AttributeValue.span("alternator"))
    )
    assert derive_transition(unknown, unknown).action == Action.NONE
    assert derive_transition(tank, nowhere).action == Action.DESTROY
    assert derive_transition(unknown, tank).matches(TransitionLabel.move(tank))
    assert derive_transition(tank, unknown).matches(TransitionLabel.move(unknown))
    assert derive_transition(tank, AttributeValue.span("TANK")).action == Action.NONE
    assert derive_transition(nowhere, nowhere).action == Action.NONE


def test_apply_transition_cases() -> None:
    alternator = AttributeValue.span("alternator")
    tank = AttributeValue.span("tank")

    assert apply_transition(AttributeValue.nowhere(), TransitionLabel.create(alternator)) == alternator
    assert apply_transition(tank, TransitionLabel.none()) == tank
    assert apply_transition(tank, TransitionLabel.destroy()) == AttributeValue.nowhere()

    with pytest.raises(InconsistentTransition):
        apply_transition(AttributeValue.nowhere(), TransitionLabel.move(AttributeValue.span("engine")))
    with pytest.raises(InconsistentTransition):
        apply_transition(AttributeValue.nowhere(), TransitionLabel.destroy())
    with pytest.raises(InconsistentTransition):
        apply_transition(tank, TransitionLabel.create(alternator))
    with pytest.raises(InconsistentTransition):
        apply_transition(tank, TransitionLabel.move(AttributeValue.span("Tank")))
    with pytest.raises(InconsistentTransition):
        apply_transition(AttributeValue.nowhere(), TransitionLabel(Action.CREATE))


def test_consistent_grid_has_no_violations() -> None:
    grid = make_grid(
        "car",
        ["fuel", "mechanical energy"],
        [["tank", "-"], ["engine", "-"], ["-", "alternator"], ["-", "battery"]],
    )
    transitions = derive_transitions(grid)

    assert [label.action for label in transitions.row(grid.entity_named("fuel"))] == [
        Action.MOVE,
        Action.DESTROY,
        Action.NONE,
    ]
    assert check_consistency(grid, transitions) == []


def test_move_on_nonexistence_is_a_move_violation() -> None:
    grid = make_grid("car", ["fuel"], [["-"], ["-"]])
    transitions = TransitionSeq.build(grid.entities, [[TransitionLabel.move(AttributeValue.span("engine"))]])

    violations = check_consistency(grid, transitions)

    assert len(violations) == 1
    assert violations[0].category == ViolationCategory.MOVE
    assert violations[0].step == 1


def test_create_on_existing_entity_is_a_creation_violation() -> None:
    grid = make_grid("p", ["x"], [["x"], ["y"]])
    transitions = TransitionSeq.build(grid.entities, [[TransitionLabel.create(AttributeValue.span("y"))]])

    violations = check_consistency(grid, transitions)

    assert [v.category for v in violations] == [ViolationCategory.CREATION]
    assert "already exists" in violations[0].reason


def test_missing_transition_is_tagged_by_the_derived_action() -> None:
    grid = make_grid("p", ["x", "y"], [["tank", "-"], ["-", "sea"]])
    transitions = TransitionSeq.build(grid.entities, [[TransitionLabel.none()], [TransitionLabel.none()]])

    counts = count_violations(check_consistency(grid, transitions))

    assert counts == {
        ViolationCategory.CREATION: 1,
        ViolationCategory.MOVE: 0,
        ViolationCategory.DESTROY: 1,
    }


def test_check_consistency_rejects_mismatched_shapes() -> None:
    grid = make_grid("p", ["x"], [["a"], ["b"], ["c"]])
    transitions = TransitionSeq.build(grid.entities, [[TransitionLabel.none()]])
    with pytest.raises(ShapeMismatch):
        check_consistency(grid, transitions)


def test_replay_rejects_wrong_initial_length() -> None:
    grid = make_grid("p", ["x"], [["a"], ["b"]])
    with pytest.raises(ShapeMismatch):
        replay([], derive_transitions(grid))


def test_random_grids_round_trip_through_transitions() -> None:
    rng = random.Random(2024)
    for _ in range(1000):
        grid = _random_grid(rng)
        transitions = derive_transitions(grid)

        assert len(transitions.rows) == len(grid.entities)
        assert all(len(row) == grid.num_steps for row in transitions.rows)
        assert check_consistency(grid, transitions) == []

        replayed = replay([column[0] for column in grid.columns], transitions)
        for original, rebuilt in zip(grid.columns, replayed.columns):
            assert all(a.same_value(b) for a, b in zip(original, rebuilt))


def test_corrupted_transitions_are_always_flagged() -> None:
    rng = random.Random(7)
    actions = list(Action)
    flagged = 0
    for _ in range(1000):
        grid = _random_grid(rng)
        transitions = derive_transitions(grid)
        row_idx = rng.randrange(len(grid.entities))
        step = rng.randrange(grid.num_steps)
        original = transitions.rows[row_idx][step]
        action = rng.choice([a for a in actions if a != original.action])
        location = AttributeValue.span("elsewhere") if action in (Action.CREATE, Action.MOVE) else None
        rows = [list(row) for row in transitions.rows]
        rows[row_idx][step] = TransitionLabel(action, location)

        violations = check_consistency(grid, TransitionSeq.build(grid.entities, rows, grid.num_steps))

        assert len(violations) == 1
        assert violations[0].step == step + 1
        flagged += 1
    assert flagged == 1000
