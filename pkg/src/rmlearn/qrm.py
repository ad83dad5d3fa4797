"""Tabular Q-learning with one Q-table and one replay buffer per RM state.

The agent acts from the table of its current RM state and bootstraps from
the table of the RM state it lands in. Tables are sparse: unseen
``(state, action)`` entries read as 0.
"""

from __future__ import annotations

import json
import math
import struct
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import blockworld as bw
from .exceptions import (ConfigError, IoError, ParseError, RangeError, ReplayMismatchError,
                         StateIndexError)
from .featurize import FeatureExtractor, featurize_state
from .rmcore import LabelingFn, RewardMachine, RmRunState, rm_step

CHECKPOINT_MAGIC = b"RMQC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    alpha: float = 0.1
    batch_size: int = 16
    episodes: int = 500
    eps_start: float = 0.7
    eps_end: float = 0.1
    eval_every: int = 5
    seed: int = 0
    buffer_capacity: int = 10_000
    updates_per_episode: int = 1

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.eps_start >= self.eps_end >= 0:
            raise ConfigError("need eps_start >= eps_end >= 0")
        if self.batch_size < 1 or self.buffer_capacity < 1 or self.updates_per_episode < 0:
            raise ConfigError("batch_size and buffer_capacity must be positive")
        if self.episodes < 0 or self.eval_every < 1:
            raise ConfigError("episodes must be >= 0 and eval_every >= 1")


class Transition(NamedTuple):
    s: tuple
    a: int
    r: float
    s2: tuple
    u: int
    u2: int
    done: bool


class QTables:
    """``tables[u][state_key][action] -> value``; missing entries are 0."""

    def __init__(self, n_rm_states: int, n_actions: int):
        self.n_rm_states = n_rm_states
        self.n_actions = n_actions
        self.tables: list[dict] = [{} for _ in range(n_rm_states)]

    def _table(self, u: int) -> dict:
        if not 0 <= u < self.n_rm_states:
            raise StateIndexError(f"no Q-table for RM state {u}")
        return self.tables[u]

    def get(self, u: int, s, a: int) -> float:
        return self._table(u).get(s, {}).get(a, 0.0)

    def set(self, u: int, s, a: int, value: float) -> None:
        if not math.isfinite(value):
            raise ValueError(f"non-finite Q-value {value}")
        self._table(u).setdefault(s, {})[a] = value

    def row_max(self, u: int, s) -> float:
        row = self._table(u).get(s)
        if not row:
            return 0.0
        m = max(row.values())
        return m if len(row) == self.n_actions else max(m, 0.0)

    def greedy(self, u: int, s) -> int:
        """Argmax action, lowest index on ties."""
        row = self._table(u).get(s)
        if not row:
            return 0
        best_a = min(row, key=lambda a: (-row[a], a))
        best = row[best_a]
        if len(row) < self.n_actions and best <= 0:
            z = 0
            while z in row:
                z += 1
            if best < 0 or z < best_a:
                return z
        return best_a

    def values(self, u: int, s) -> np.ndarray:
        out = np.zeros(self.n_actions)
        for a, q in self._table(u).get(s, {}).items():
            out[a] = q
        return out

    def __eq__(self, other):
        return (isinstance(other, QTables) and self.n_actions == other.n_actions
                and self.tables == other.tables)


class ReplayBuffers:
    """FIFO ring buffer of transitions per RM state."""

    def __init__(self, n_rm_states: int, capacity: int = 10_000):
        self.capacity = capacity
        self.buffers = [deque(maxlen=capacity) for _ in range(n_rm_states)]

    def append(self, tr: Transition) -> None:
        if not 0 <= tr.u < len(self.buffers):
            raise StateIndexError(f"no buffer for RM state {tr.u}")
        self.buffers[tr.u].append(tr)

    def sample(self, u: int, n: int, rng: np.random.Generator) -> list[Transition]:
        buf = self.buffers[u]
        if not buf:
            return []
        idx = rng.choice(len(buf), size=min(n, len(buf)), replace=False)
        return [buf[i] for i in idx]

    def __len__(self):
        return sum(len(b) for b in self.buffers)

    def __getitem__(self, u):
        return self.buffers[u]


def td_target(r: float, gamma: float, next_q_max: float, done: bool) -> float:
    return r if done else r + gamma * next_q_max


def q_update(tables: QTables, batch, alpha: float, gamma: float) -> None:
    for tr in batch:
        y = td_target(tr.r, gamma, tables.row_max(tr.u2, tr.s2), tr.done)
        q = tables.get(tr.u, tr.s, tr.a)
        tables.set(tr.u, tr.s, tr.a, q + alpha * (y - q))


def epsilon_at(cfg: TrainConfig, episode: int) -> float:
    """Exponential decay from ``eps_start`` to ``eps_end`` over the run."""
    if not 0 <= episode < cfg.episodes:
        raise RangeError(f"episode {episode} outside [0, {cfg.episodes})")
    if cfg.episodes == 1 or cfg.eps_start == 0:
        return cfg.eps_start
    return cfg.eps_start * (cfg.eps_end / cfg.eps_start) ** (episode / (cfg.episodes - 1))


# -- environments -------------------------------------------------------------

class BlockWorldEnv:
    """Adapter exposing a :class:`~rmlearn.blockworld.TaskSpec` to the trainer."""

    def __init__(self, spec: bw.TaskSpec):
        self.spec = spec
        self.n_actions = spec.n_actions
        self.step_cap = spec.step_cap
        self._actions = [bw.PickPlaceAction.from_index(i, spec.width, spec.height)
                         for i in range(self.n_actions)]

    def reset(self, seed: int = 0):
        return bw.reset(self.spec, seed)

    def step(self, s, a: int):
        return bw.step(s, self._actions[a])

    def action_index(self, a: bw.PickPlaceAction) -> int:
        return a.index(self.spec.width, self.spec.height)

    @staticmethod
    def key(s) -> tuple:
        return s.key()

    def error(self, s) -> float:
        return bw.placement_error(s, self.spec)


class FeatureLabeler:
    """Labels environment states through the feature extractor and ``L``."""

    def __init__(self, extractor: FeatureExtractor, labeling: LabelingFn):
        self.extractor = extractor
        self.labeling = labeling

    def __call__(self, s, frame: int = 0) -> frozenset:
        i = self.labeling.label_id(featurize_state(self.extractor, s, frame))
        return frozenset() if i < 0 else frozenset((i,))


class GroundTruthLabeler:
    """Proposition ``i`` holds iff the block configuration equals sub-goal state ``i``."""

    def __init__(self, states):
        self._lookup = {s.key(): i for i, s in enumerate(states)}

    def __call__(self, s, frame: int = 0) -> frozenset:
        i = self._lookup.get(s.key())
        return frozenset() if i is None else frozenset((i,))


class RMEnv:
    """Product of an environment and a reward machine."""

    def __init__(self, env, rm: RewardMachine, labeler):
        self.env = env
        self.rm = rm
        self.labeler = labeler

    @property
    def n_actions(self):
        return self.env.n_actions

    @property
    def step_cap(self):
        return self.env.step_cap

    def transition(self, s, run: RmRunState, a: int, frame: int):
        s2 = self.env.step(s, a)
        run2, r = rm_step(self.rm, run, self.labeler(s2, frame))
        return s2, run2, r


# -- training -----------------------------------------------------------------

def seed_buffers_from_demos(buffers: ReplayBuffers, demos, env: RMEnv) -> int:
    """Replay expert demos through the product env; returns transitions added."""
    added = 0
    for states, actions, *_ in demos:
        if len(states) != len(actions) + 1:
            raise ReplayMismatchError("a demo needs exactly one more state than actions")
        s, run = states[0], RmRunState(env.rm.initial)
        for t, a in enumerate(actions):
            ai = a if isinstance(a, (int, np.integer)) else env.env.action_index(a)
            s2, run2, r = env.transition(s, run, int(ai), t + 1)
            if env.env.key(s2) != env.env.key(states[t + 1]):
                raise ReplayMismatchError(f"demo step {t} does not reproduce the recorded state")
            buffers.append(Transition(env.env.key(s), int(ai), r, env.env.key(s2),
                                      run.current, run2.current, run2.done))
            added += 1
            s, run = s2, run2
            if run.done:
                break
    return added


class EvalResult(NamedTuple):
    total_reward: float
    placement_error: float
    rm_trace: tuple


def evaluate_greedy(env: RMEnv, tables: QTables, seed: int = 0) -> EvalResult:
    """One epsilon=0 rollout: total shaped reward, final placement error, RM states visited."""
    s = env.env.reset(seed)
    run = RmRunState(env.rm.initial)
    trace = [run.current]
    total = 0.0
    for t in range(env.step_cap):
        a = tables.greedy(run.current, env.env.key(s))
        s, run, r = env.transition(s, run, a, t + 1)
        total += r
        if run.current != trace[-1]:
            trace.append(run.current)
        if run.done:
            break
    return EvalResult(total, env.env.error(s), tuple(trace))


class QRMTrainer:
    """Stateful training loop; checkpointable between episodes."""

    def __init__(self, env: RMEnv, cfg: TrainConfig):
        self.env = env
        self.cfg = cfg
        self.tables = QTables(env.rm.n_states, env.n_actions)
        self.buffers = ReplayBuffers(env.rm.n_states, cfg.buffer_capacity)
        self.rng = np.random.default_rng(cfg.seed)
        self.episode = 0
        self.metrics: list[tuple] = []
        self.first_goal_episode: int | None = None

    def seed_demos(self, demos) -> "QRMTrainer":
        seed_buffers_from_demos(self.buffers, demos, self.env)
        return self

    def run_episode(self) -> None:
        env, cfg, rng, tables = self.env, self.cfg, self.rng, self.tables
        eps = epsilon_at(cfg, self.episode)
        s = env.env.reset(cfg.seed + self.episode)
        run = RmRunState(env.rm.initial)
        key = env.env.key
        for t in range(env.step_cap):
            k = key(s)
            if rng.random() < eps:
                a = int(rng.integers(env.n_actions))
            else:
                a = tables.greedy(run.current, k)
            s2, run2, r = env.transition(s, run, a, t + 1)
            self.buffers.append(Transition(k, a, r, key(s2), run.current, run2.current, run2.done))
            s, run = s2, run2
            if run.done:
                if self.first_goal_episode is None:
                    self.first_goal_episode = self.episode
                break
        for u in range(env.rm.n_states):
            for _ in range(cfg.updates_per_episode):
                q_update(tables, self.buffers.sample(u, cfg.batch_size, rng), cfg.alpha, cfg.gamma)
        self.episode += 1
        if self.episode % cfg.eval_every == 0:
            res = evaluate_greedy(env, tables, cfg.seed)
            self.metrics.append((self.episode, res.total_reward, res.placement_error, res.rm_trace))

    def run(self, until: int | None = None) -> "QRMTrainer":
        until = self.cfg.episodes if until is None else min(until, self.cfg.episodes)
        while self.episode < until:
            self.run_episode()
        return self

    # checkpoint layout: magic, u32 version, u32 header length, JSON header,
    # then per RM state a Q-table block and a replay-buffer block.
    def save(self, path) -> None:
        L = self._key_len()
        header = {
            "episode": self.episode,
            "n_rm_states": self.tables.n_rm_states,
            "n_actions": self.tables.n_actions,
            "key_len": L,
            "config": asdict(self.cfg),
            "rng": self.rng.bit_generator.state,
            "metrics": [[e, r, p, list(tr)] for e, r, p, tr in self.metrics],
            "first_goal_episode": self.first_goal_episode,
        }
        hb = json.dumps(header, sort_keys=True).encode()
        qdt, tdt = _dtypes(L)
        parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(hb)), hb]
        for u in range(self.tables.n_rm_states):
            rows = [(k, a, q) for k, row in self.tables.tables[u].items() for a, q in row.items()]
            arr = np.array(rows, dtype=qdt) if rows else np.zeros(0, dtype=qdt)
            parts += [struct.pack("<Q", len(arr)), arr.tobytes()]
            buf = list(self.buffers[u])
            arr = (np.array([(t.s, t.a, t.r, t.s2, t.u, t.u2, t.done) for t in buf], dtype=tdt)
                   if buf else np.zeros(0, dtype=tdt))
            parts += [struct.pack("<Q", len(arr)), arr.tobytes()]
        try:
            Path(path).write_bytes(b"".join(parts))
        except OSError as exc:
            raise IoError(f"cannot write checkpoint {path}: {exc}") from exc

    def _key_len(self) -> int:
        for table in self.tables.tables:
            for k in table:
                return len(k)
        for buf in self.buffers.buffers:
            for t in buf:
                return len(t.s)
        return len(self.env.env.key(self.env.env.reset(self.cfg.seed)))

    @classmethod
    def load(cls, path, env: RMEnv, cfg: TrainConfig | None = None) -> "QRMTrainer":
        header, tables, buffers = read_checkpoint(path)
        saved_cfg = TrainConfig(**header["config"])
        cfg = cfg or saved_cfg
        if tables.n_rm_states != env.rm.n_states or tables.n_actions != env.n_actions:
            raise ConfigError("checkpoint does not match the reward machine / environment")
        self = cls(env, cfg)
        self.tables = tables
        for u, items in enumerate(buffers):
            self.buffers.buffers[u].extend(items)
        self.rng.bit_generator.state = header["rng"]
        self.episode = header["episode"]
        self.metrics = [(e, r, p, tuple(tr)) for e, r, p, tr in header["metrics"]]
        self.first_goal_episode = header.get("first_goal_episode")
        return self


def _dtypes(L: int):
    qdt = np.dtype([("key", "<i4", (L,)), ("a", "<u4"), ("q", "<f8")])
    tdt = np.dtype([("s", "<i4", (L,)), ("a", "<u4"), ("r", "<f8"), ("s2", "<i4", (L,)),
                    ("u", "<u4"), ("u2", "<u4"), ("done", "u1")])
    return qdt, tdt


def read_checkpoint(path):
    """Return ``(header, QTables, per-state transition lists)``."""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise IoError(f"checkpoint not found: {path}") from exc
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path} is not a Q-table checkpoint")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    off = 12
    header = json.loads(data[off:off + hlen])
    off += hlen
    qdt, tdt = _dtypes(header["key_len"])
    tables = QTables(header["n_rm_states"], header["n_actions"])
    buffers = []
    for u in range(header["n_rm_states"]):
        (n,) = struct.unpack_from("<Q", data, off)
        off += 8
        arr = np.frombuffer(data, dtype=qdt, count=n, offset=off)
        off += n * qdt.itemsize
        table = tables.tables[u]
        for rec in arr:
            table.setdefault(tuple(int(x) for x in rec["key"]), {})[int(rec["a"])] = float(rec["q"])
        (n,) = struct.unpack_from("<Q", data, off)
        off += 8
        arr = np.frombuffer(data, dtype=tdt, count=n, offset=off)
        off += n * tdt.itemsize
        buffers.append([Transition(tuple(int(x) for x in rec["s"]), int(rec["a"]), float(rec["r"]),
                                   tuple(int(x) for x in rec["s2"]), int(rec["u"]), int(rec["u2"]),
                                   bool(rec["done"])) for rec in arr])
    return header, tables, buffers


def train(env: RMEnv, cfg: TrainConfig, demos=None):
    """Run ``cfg.episodes`` episodes; returns ``(QTables, metrics)``.

    Each metrics row is ``(episode, total_reward, placement_error, rm_trace)``
    from a greedy rollout taken every ``cfg.eval_every`` episodes.
    """
    trainer = QRMTrainer(env, cfg)
    if demos:
        trainer.seed_demos(demos)
    trainer.run()
    return trainer.tables, trainer.metrics


def write_metrics_csv(metrics, path) -> None:
    lines = ["episode,total_reward,placement_error,rm_trace"]
    for e, r, p, trace in metrics:
        lines.append(f"{e},{r!r},{p!r},{'-'.join(str(u) for u in trace)}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write metrics {path}: {exc}") from exc


class QRMAgent(BaseEstimator):
    """Estimator facade over :class:`QRMTrainer`.

    ``fit(env, demos)`` trains on an :class:`RMEnv`; ``predict`` returns
    greedy actions for ``(env_state_key, rm_state)`` pairs.
    """

    def __init__(self, gamma=0.9, alpha=0.1, batch_size=16, episodes=500, eps_start=0.7,
                 eps_end=0.1, eval_every=5, seed=0, buffer_capacity=10_000,
                 updates_per_episode=1):
        self.gamma = gamma
        self.alpha = alpha
        self.batch_size = batch_size
        self.episodes = episodes
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eval_every = eval_every
        self.seed = seed
        self.buffer_capacity = buffer_capacity
        self.updates_per_episode = updates_per_episode

    def fit(self, env: RMEnv, demos=None):
        cfg = TrainConfig(**self.get_params())
        self.q_tables_, self.metrics_ = train(env, cfg, demos)
        self.env_ = env
        return self

    def predict(self, X):
        check_is_fitted(self, "q_tables_")
        return np.array([self.q_tables_.greedy(int(u), tuple(k)) for k, u in X], dtype=np.int64)

    def evaluate(self, seed=0) -> EvalResult:
        check_is_fitted(self, "q_tables_")
        return evaluate_greedy(self.env_, self.q_tables_, seed)
