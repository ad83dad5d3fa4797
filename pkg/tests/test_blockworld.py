from itertools import permutations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmlearn.blockworld import (BUILTIN_TASKS, Block, BlockWorldState, PickPlaceAction,
                                expert_demos, load_task_spec, num_actions, placement_error,
                                reset, step, task_from_dict, task_to_dict)
from rmlearn.exceptions import ConfigError, CoverageError, IoError, ValidationError


def _state(*blocks, w=6, h=6):
    return BlockWorldState(w, h, [Block(chr(65 + i), "", *b) for i, b in enumerate(blocks)])


def test_move_to_empty_cell():
    s = _state((0, 0, 0), (0, 0, 1))
    t = step(s, PickPlaceAction((0, 0), (3, 4)))
    assert t.block("B") == Block("B", "", 3, 4, 0)
    assert t.block("A") == s.block("A")


def test_empty_pick_and_same_cell_are_noops():
    s = _state((1, 1, 0))
    assert step(s, PickPlaceAction((2, 2), (3, 3))) is s
    assert step(s, PickPlaceAction((1, 1), (1, 1))) is s


def test_stacking_lands_on_top():
    s = _state((0, 0, 0), (2, 2, 0), (2, 2, 1))
    t = step(s, PickPlaceAction((0, 0), (2, 2)))
    assert t.block("A").height == 2
    assert t.stack_height(2, 2) == 3


def test_invalid_states_rejected():
    with pytest.raises(ValidationError):
        _state((0, 0, 1))               # floating
    with pytest.raises(ValidationError):
        _state((0, 0, 0), (0, 0, 0))    # collision
    with pytest.raises(ValidationError):
        _state((6, 0, 0))               # off grid


def test_action_index_round_trip():
    n = num_actions(6, 6)
    assert n == 36 * 36
    for i in (0, 1, 37, n - 1):
        assert PickPlaceAction.from_index(i, 6, 6).index(6, 6) == i
    with pytest.raises(ValidationError):
        PickPlaceAction.from_index(n, 6, 6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 36 * 36 - 1), max_size=30))
def test_step_preserves_count_and_validity(actions):
    s = load_task_spec("pyramid3").initial_state()
    for a in actions:
        s = step(s, PickPlaceAction.from_index(a, 6, 6))
        assert len(s.blocks) == 3
        BlockWorldState(s.width, s.height, s.blocks)   # re-validates physics


def test_reset_places_blocks_at_spec_cells():
    spec = load_task_spec("stack2")
    s = reset(spec, 3)
    assert [(b.col, b.row, b.height) for b in s.blocks] == [(0, 0, 0), (5, 5, 0)]
    assert reset(spec, 3) == reset(spec, 3)


def test_reset_jitter_only_touches_randomized_blocks():
    d = task_to_dict(load_task_spec("place2"))
    d["randomize"] = ["A"]
    d["orderings"] = [["A", "B"]]
    spec = task_from_dict(d)
    states = [reset(spec, seed) for seed in range(10)]
    assert states[0] == reset(spec, 0)
    assert len({s.block("A") for s in states}) > 1
    assert all(s.block("B") == spec.initial_state().block("B") for s in states)


def test_placement_error_values():
    spec = load_task_spec("place2")
    assert placement_error(spec.goal_state(), spec) == 0.0
    a, b = spec.goal_state().blocks
    off = BlockWorldState(6, 6, (Block(a.id, a.color, a.col + 1, a.row), b))
    assert placement_error(off, spec) == 0.5


def test_stack3_single_demo_and_rm_goal_same_step():
    spec = load_task_spec("stack3")
    (demo,) = expert_demos(spec, 1)
    assert demo.ordering == ("C", "B", "A")
    assert placement_error(demo.states[-1], spec) == 0.0
    assert all(placement_error(s, spec) > 0 for s in demo.states[:-1])
    assert demo.subgoals[-1] == spec.golden["goal"]


def test_place3_six_demos_cover_all_orderings():
    spec = load_task_spec("place3")
    demos = expert_demos(spec, 6)
    assert {d.ordering for d in demos} == set(permutations("ABC"))
    with pytest.raises(CoverageError):
        expert_demos(spec, 5)
    assert len(expert_demos(spec, 2, coverage=False)) == 2


@pytest.mark.parametrize("name", BUILTIN_TASKS)
def test_expert_replay_and_optimality(name):
    spec = load_task_spec(name)
    movers = sum(1 for b in spec.blocks if (b.col, b.row, b.height) != spec.goals[b.id])
    for demo in expert_demos(spec, len(spec.orderings)):
        s = demo.states[0]
        for a, expected in zip(demo.actions, demo.states[1:]):
            s = step(s, a)
            assert s == expected
        assert len(demo.actions) == movers
        assert placement_error(s, spec) == 0.0


@pytest.mark.parametrize("name", BUILTIN_TASKS)
def test_golden_rm_matches_orderings(name):
    spec = load_task_spec(name)
    edges = set()
    for order in spec.orderings:
        names = [spec.subgoal_name(order[:i]) for i in range(len(order) + 1)]
        edges |= set(zip(names, names[1:]))
    g = spec.golden
    assert edges == {tuple(e) for e in g["edges"]}
    assert set(g["states"]) == {n for e in edges for n in e}
    assert g["initial"] == "init"
    assert set(g["states"]) <= set(spec.subgoal_states())


def test_spec_round_trip_and_errors(tmp_path):
    spec = load_task_spec("pyramid3")
    assert task_from_dict(task_to_dict(spec)) == spec
    d = task_to_dict(spec)
    d["orderings"] = [["C", "A", "B"]]     # C would float
    with pytest.raises(ConfigError):
        task_from_dict(d)
    with pytest.raises(ConfigError):
        task_from_dict({"name": "x"})
    with pytest.raises(IoError):
        load_task_spec(tmp_path / "missing.json")
