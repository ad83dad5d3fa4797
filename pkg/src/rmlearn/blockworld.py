"""Discrete pick-and-place block world.

Blocks sit on a ``W x H`` grid of cells; several blocks on one cell form a
stack. An action picks the topmost block of one cell and drops it on top of
another cell. Anything else (empty pick cell, pick == place) is a no-op that
still costs a timestep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from itertools import permutations
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .exceptions import ConfigError, CoverageError, IoError, ValidationError

BUILTIN_TASKS = ("stack2", "place2", "pyramid3", "stack3", "place3")
INITIAL_SUBGOAL = "init"


@dataclass(frozen=True)
class Block:
    id: str
    color: str
    col: int
    row: int
    height: int = 0


@dataclass(frozen=True)
class BlockWorldState:
    width: int
    height: int
    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        _check_physical(self.width, self.height, self.blocks)

    def key(self) -> tuple:
        """Canonical hashable encoding: (col, row, height) per block, in block order."""
        return tuple(v for b in self.blocks for v in (b.col, b.row, b.height))

    def stack_height(self, col: int, row: int) -> int:
        return sum(1 for b in self.blocks if b.col == col and b.row == row)

    def block(self, block_id: str) -> Block:
        for b in self.blocks:
            if b.id == block_id:
                return b
        raise KeyError(block_id)


def _check_physical(width, height, blocks):
    if width < 1 or height < 1:
        raise ValidationError(f"grid must be at least 1x1, got {width}x{height}")
    seen = set()
    per_cell: dict = {}
    for b in blocks:
        if not (0 <= b.col < width and 0 <= b.row < height):
            raise ValidationError(f"block {b.id} at ({b.col},{b.row}) is off the grid")
        if b.height < 0:
            raise ValidationError(f"block {b.id} has negative stack height")
        pos = (b.col, b.row, b.height)
        if pos in seen:
            raise ValidationError(f"two blocks occupy {pos}")
        seen.add(pos)
        per_cell.setdefault((b.col, b.row), []).append(b.height)
    for cell, hs in per_cell.items():
        if sorted(hs) != list(range(len(hs))):
            raise ValidationError(f"stack at {cell} is not contiguous from the table: {sorted(hs)}")


@dataclass(frozen=True)
class PickPlaceAction:
    pick: tuple
    place: tuple

    def index(self, width: int, height: int) -> int:
        n = width * height
        return (self.pick[1] * width + self.pick[0]) * n + self.place[1] * width + self.place[0]

    @classmethod
    def from_index(cls, index: int, width: int, height: int) -> "PickPlaceAction":
        n = width * height
        if not 0 <= index < n * n:
            raise ValidationError(f"action index {index} out of range for {width}x{height} grid")
        p, q = divmod(index, n)
        return cls((p % width, p // width), (q % width, q // width))


def num_actions(width: int, height: int) -> int:
    return (width * height) ** 2


@dataclass(frozen=True)
class TaskSpec:
    name: str
    width: int
    height: int
    blocks: tuple               # initial Blocks
    goals: dict                 # block id -> (col, row, height)
    orderings: tuple            # allowed orders in which blocks are moved
    step_cap: int = 50
    randomize: tuple = ()       # ids of blocks whose start cell is jittered on reset
    golden: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "orderings", tuple(tuple(o) for o in self.orderings))
        object.__setattr__(self, "randomize", tuple(self.randomize))
        ids = [b.id for b in self.blocks]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"task {self.name}: duplicate block ids")
        if set(self.goals) != set(ids):
            raise ConfigError(f"task {self.name}: every block needs exactly one goal")
        if self.step_cap < 1:
            raise ConfigError("step_cap must be positive")
        self.initial_state()
        goal_blocks = [replace(b, col=g[0], row=g[1], height=g[2])
                       for b, g in ((b, self.goals[b.id]) for b in self.blocks)]
        BlockWorldState(self.width, self.height, goal_blocks)
        if not self.orderings:
            raise ConfigError(f"task {self.name}: at least one ordering is required")
        for order in self.orderings:
            _expert_rollout(self, self.initial_state(), order)

    def initial_state(self) -> BlockWorldState:
        return BlockWorldState(self.width, self.height, self.blocks)

    def goal_state(self) -> BlockWorldState:
        return BlockWorldState(self.width, self.height, tuple(
            replace(b, col=self.goals[b.id][0], row=self.goals[b.id][1],
                    height=self.goals[b.id][2]) for b in self.blocks))

    @property
    def n_actions(self) -> int:
        return num_actions(self.width, self.height)

    def subgoal_name(self, placed) -> str:
        placed = set(placed)
        if not placed:
            return INITIAL_SUBGOAL
        return "+".join(b.id for b in self.blocks if b.id in placed)

    def subgoal_states(self) -> dict:
        """Sub-goal name -> BlockWorldState, for every prefix of every ordering."""
        out = {INITIAL_SUBGOAL: self.initial_state()}
        for order in self.orderings:
            states, _ = _expert_rollout(self, self.initial_state(), order)
            for i, s in enumerate(states[1:], start=1):
                out.setdefault(self.subgoal_name(order[:i]), s)
        return out


def step(s: BlockWorldState, a: PickPlaceAction) -> BlockWorldState:
    if a.pick == a.place:
        return s
    pc, pr = a.pick
    top = None
    place_h = 0
    for b in s.blocks:
        if b.col == pc and b.row == pr and (top is None or b.height > top.height):
            top = b
        if (b.col, b.row) == a.place:
            place_h += 1
    if top is None:
        return s
    moved = Block(top.id, top.color, a.place[0], a.place[1], place_h)
    return BlockWorldState(s.width, s.height,
                           tuple(moved if b is top else b for b in s.blocks))


def reset(spec: TaskSpec, seed: int = 0) -> BlockWorldState:
    s = spec.initial_state()
    if not spec.randomize:
        return s
    rng = np.random.default_rng(seed)
    goal_cells = {g[:2] for g in spec.goals.values()}
    blocks = list(s.blocks)
    for bid in spec.randomize:
        i = next(k for k, b in enumerate(blocks) if b.id == bid)
        occupied = {(b.col, b.row) for b in blocks}
        free = [(c, r) for r in range(spec.height) for c in range(spec.width)
                if (c, r) not in occupied and (c, r) not in goal_cells]
        c, r = free[int(rng.integers(len(free)))]
        blocks[i] = replace(blocks[i], col=c, row=r, height=0)
    return BlockWorldState(s.width, s.height, blocks)


def placement_error(s: BlockWorldState, spec: TaskSpec) -> float:
    """Mean per-block distance to the goal cell, plus one unit per stack level off."""
    total = 0.0
    for b in s.blocks:
        gc, gr, gh = spec.goals[b.id]
        total += float(np.hypot(b.col - gc, b.row - gr)) + abs(b.height - gh)
    return total / len(s.blocks)


class ExpertDemo(NamedTuple):
    states: list
    actions: list
    ordering: tuple
    subgoals: list      # sub-goal name of each state


def _expert_rollout(spec: TaskSpec, s: BlockWorldState, order) -> tuple[list, list]:
    states, actions = [s], []
    for bid in order:
        if bid not in spec.goals:
            raise ConfigError(f"task {spec.name}: ordering names unknown block {bid!r}")
        b = s.block(bid)
        gc, gr, gh = spec.goals[bid]
        if b.height != s.stack_height(b.col, b.row) - 1:
            raise ConfigError(f"task {spec.name}: block {bid} is covered when ordering {order} moves it")
        a = PickPlaceAction((b.col, b.row), (gc, gr))
        s = step(s, a)
        if s.block(bid).height != gh:
            raise ConfigError(f"task {spec.name}: ordering {order} puts {bid} at height "
                              f"{s.block(bid).height}, goal is {gh}")
        states.append(s)
        actions.append(a)
    if placement_error(s, spec) != 0.0:
        raise ConfigError(f"task {spec.name}: ordering {order} does not reach the goal")
    return states, actions


def expert_demos(spec: TaskSpec, n: int, seed: int = 0, coverage: bool = True) -> list[ExpertDemo]:
    """Scripted demonstrations; demo ``i`` follows ordering ``i mod len(orderings)``.

    With ``coverage`` on, ``n`` must be large enough for every ordering to
    appear at least once.
    """
    m = len(spec.orderings)
    if coverage and n < m:
        raise CoverageError(f"task {spec.name} has {m} orderings; {n} demonstrations cannot cover them")
    demos = []
    for i in range(n):
        order = spec.orderings[i % m]
        states, actions = _expert_rollout(spec, reset(spec, seed + i), order)
        names = [spec.subgoal_name(order[:j]) for j in range(len(states))]
        demos.append(ExpertDemo(states, actions, order, names))
    return demos


# -- TaskSpec files -----------------------------------------------------------

def task_from_dict(d: dict) -> TaskSpec:
    try:
        w, h = d["grid"]
        blocks = tuple(Block(b["id"], b.get("color", ""), b["cell"][0], b["cell"][1],
                             b.get("height", 0)) for b in d["blocks"])
        goals = {k: tuple(v) if len(v) == 3 else (v[0], v[1], 0) for k, v in d["goals"].items()}
        orderings = d.get("orderings")
        if orderings == "all":
            movers = [b.id for b in blocks if (b.col, b.row, b.height) != goals[b.id]]
            orderings = [list(p) for p in permutations(movers)]
        return TaskSpec(
            name=d["name"], width=int(w), height=int(h), blocks=blocks, goals=goals,
            orderings=orderings, step_cap=int(d.get("step_cap", 50)),
            randomize=tuple(d.get("randomize", ())), golden=d.get("golden"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ConfigError(f"malformed task spec: {exc!r}") from exc


def task_to_dict(spec: TaskSpec) -> dict:
    d = {
        "name": spec.name,
        "grid": [spec.width, spec.height],
        "blocks": [{"id": b.id, "color": b.color, "cell": [b.col, b.row], "height": b.height}
                   for b in spec.blocks],
        "goals": {k: list(v) for k, v in spec.goals.items()},
        "orderings": [list(o) for o in spec.orderings],
        "step_cap": spec.step_cap,
        "randomize": list(spec.randomize),
    }
    if spec.golden is not None:
        d["golden"] = spec.golden
    return d


def load_task_spec(path_or_name) -> TaskSpec:
    """Load a task from a JSON file, or one of the bundled tasks by name."""
    if str(path_or_name) in BUILTIN_TASKS:
        text = resources.files("rmlearn.data.tasks").joinpath(f"{path_or_name}.json").read_text()
    else:
        try:
            text = Path(path_or_name).read_text()
        except FileNotFoundError as exc:
            raise IoError(f"task spec not found: {path_or_name}") from exc
    try:
        return task_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"task spec {path_or_name}: {exc}") from exc
