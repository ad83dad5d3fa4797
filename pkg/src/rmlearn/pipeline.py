"""End-to-end pipeline pieces shared by the CLI and the acceptance tests."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import blockworld as bw
from .exceptions import ConfigError, IoError
from .featurize import FeatureExtractor, record_demonstration
from .qrm import (BlockWorldEnv, FeatureLabeler, GroundTruthLabeler, QRMTrainer, RMEnv,
                  TrainConfig)
from .rmcore import RewardMachine, RewardMachineLearner
from .trajectories import DemonstrationSet

DEFAULTS = {
    "task": "stack2",
    "seed": 0,
    "featurize": {"kind": "synthetic", "noise": 0.01},
    "demos": {"n": 1, "coverage": True, "dwell": 10, "transit": 2, "format": "csv"},
    "cluster": {"eps": 0.06, "min_points": 8, "normalize": False},
    "rm": {"kappa": 0.06, "gamma": 0.9},
    "train": {"episodes": 2000, "alpha": 0.1, "batch_size": 16, "eps_start": 0.7,
              "eps_end": 0.1, "eval_every": 5, "buffer_capacity": 10_000,
              "updates_per_episode": 1},
    "eval": {"n_seeds": 10},
}
BUILTIN_CONFIGS = bw.BUILTIN_TASKS
FEATURIZERS = {"synthetic": "synthetic_blockworld", "precomputed": "precomputed"}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        elif v is not None:
            out[k] = v
    return out


@dataclass(frozen=True)
class PipelineConfig:
    data: dict
    base_dir: Path

    @classmethod
    def load(cls, path_or_name=None, overrides: dict | None = None) -> "PipelineConfig":
        """Defaults < config file < ``RMLEARN_SEED`` < explicit overrides."""
        base_dir = Path.cwd()
        data = {}
        if path_or_name is not None:
            if str(path_or_name) in BUILTIN_CONFIGS:
                text = resources.files("rmlearn.data.configs").joinpath(
                    f"{path_or_name}.json").read_text()
            else:
                p = Path(path_or_name)
                try:
                    text = p.read_text()
                except FileNotFoundError as exc:
                    raise IoError(f"config file not found: {p}") from exc
                base_dir = p.resolve().parent
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path_or_name}: {exc}") from exc
        merged = _merge(DEFAULTS, data)
        env_seed = os.environ.get("RMLEARN_SEED")
        if env_seed is not None:
            try:
                merged["seed"] = int(env_seed)
            except ValueError:
                raise ConfigError(f"RMLEARN_SEED={env_seed!r} is not an integer") from None
        merged = _merge(merged, overrides or {})
        cfg = cls(merged, base_dir)
        cfg.validate()
        return cfg

    def __getitem__(self, section):
        return self.data[section]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def validate(self) -> None:
        if self["featurize"]["kind"] not in FEATURIZERS:
            raise ConfigError(f"featurizer must be one of {sorted(FEATURIZERS)}")
        if self["demos"]["format"] not in ("csv", "binary"):
            raise ConfigError("demos.format must be csv or binary")
        if not self["cluster"]["eps"] > 0:
            raise ConfigError(f"eps must be > 0 (got {self['cluster']['eps']})")
        if int(self["cluster"]["min_points"]) < 1:
            raise ConfigError(f"min_points must be >= 1 (got {self['cluster']['min_points']})")
        if not self["rm"]["kappa"] > 0:
            raise ConfigError(f"kappa must be > 0 (got {self['rm']['kappa']})")
        if self["featurize"]["noise"] < 0:
            raise ConfigError("noise must be non-negative")
        self.train_config()

    def task(self) -> bw.TaskSpec:
        t = self.data["task"]
        if str(t) in bw.BUILTIN_TASKS:
            return bw.load_task_spec(t)
        p = Path(t)
        return bw.load_task_spec(p if p.is_absolute() else self.base_dir / p)

    def extractor(self, spec: bw.TaskSpec) -> FeatureExtractor:
        kind = FEATURIZERS[self["featurize"]["kind"]]
        return FeatureExtractor(kind, 2 * len(spec.blocks), float(self["featurize"]["noise"]),
                                self.seed)

    def learner(self) -> RewardMachineLearner:
        c, r = self["cluster"], self["rm"]
        return RewardMachineLearner(float(c["eps"]), int(c["min_points"]), float(r["kappa"]),
                                    float(r["gamma"]), bool(c.get("normalize", False)))

    def train_config(self) -> TrainConfig:
        t = self["train"]
        return TrainConfig(gamma=float(self["rm"]["gamma"]), alpha=float(t["alpha"]),
                           batch_size=int(t["batch_size"]), episodes=int(t["episodes"]),
                           eps_start=float(t["eps_start"]), eps_end=float(t["eps_end"]),
                           eval_every=int(t["eval_every"]), seed=self.seed,
                           buffer_capacity=int(t["buffer_capacity"]),
                           updates_per_episode=int(t["updates_per_episode"]))


# -- demonstrations -----------------------------------------------------------

@dataclass(frozen=True)
class GeneratedDemos:
    demos: DemonstrationSet
    expert: list            # ExpertDemo per trajectory
    subgoal_log: list       # per trajectory, sub-goal name per frame (None = transit)


def generate_demos(spec: bw.TaskSpec, extractor: FeatureExtractor, n: int, seed: int = 0,
                   coverage: bool = True, dwell: int = 10, transit: int = 2) -> GeneratedDemos:
    expert = bw.expert_demos(spec, n, seed, coverage)
    trajs, logs, frame = [], [], 0
    for i, demo in enumerate(expert):
        traj, source = record_demonstration(extractor, demo.states, dwell, transit, frame, str(i))
        frame += len(traj)
        trajs.append(traj)
        logs.append([None if j is None else demo.subgoals[j] for j in source])
    return GeneratedDemos(DemonstrationSet(tuple(trajs), extractor.dim), expert, logs)


def expert_to_json(spec: bw.TaskSpec, expert) -> dict:
    return {
        "task": spec.name,
        "demos": [{
            "ordering": list(d.ordering),
            "states": [list(s.key()) for s in d.states],
            "actions": [[list(a.pick), list(a.place)] for a in d.actions],
            "subgoals": d.subgoals,
        } for d in expert],
    }


def expert_from_json(spec: bw.TaskSpec, d: dict) -> list[bw.ExpertDemo]:
    out = []
    for demo in d["demos"]:
        states = []
        for key in demo["states"]:
            blocks = [bw.Block(b.id, b.color, *key[3 * i:3 * i + 3]) for i, b in enumerate(spec.blocks)]
            states.append(bw.BlockWorldState(spec.width, spec.height, blocks))
        actions = [bw.PickPlaceAction(tuple(p), tuple(q)) for p, q in demo["actions"]]
        out.append(bw.ExpertDemo(states, actions, tuple(demo["ordering"]), demo["subgoals"]))
    return out


# -- golden reward machines ---------------------------------------------------

def golden_rm(spec: bw.TaskSpec, gamma: float) -> tuple[RewardMachine, GroundTruthLabeler]:
    """The hand-written RM shipped with a task, with a ground-truth labeler."""
    g = spec.golden
    if not g:
        raise ConfigError(f"task {spec.name} ships no golden reward machine")
    names = [g["initial"]] + [s for s in g["states"] if s != g["initial"]]
    idx = {n: i for i, n in enumerate(names)}
    try:
        edges = {(idx[a], idx[b]): idx[b] for a, b in g["edges"]}
    except KeyError as exc:
        raise ConfigError(f"golden RM of {spec.name} names unknown state {exc}") from None
    rm = RewardMachine.build(len(names), edges, idx[g["goal"]], gamma, names=names)
    sub = spec.subgoal_states()
    missing = [n for n in names if n not in sub]
    if missing:
        raise ConfigError(f"golden states {missing} are not sub-goals of {spec.name}")
    return rm, GroundTruthLabeler([sub[n] for n in names])


def compare_to_golden(rm: RewardMachine, prototype_sources, subgoal_log, golden: dict) -> dict:
    """Check that ``rm`` is isomorphic to ``golden`` under the prototype -> sub-goal map.

    ``prototype_sources[i]`` is the ``(trajectory id, frame)`` of prototype
    ``i``; the expert's log names the sub-goal shown in that frame.
    """
    mapping = []
    for tid, frame in prototype_sources:
        mapping.append(subgoal_log[int(tid)][int(frame)])
    problems = []
    if None in mapping:
        problems.append("a prototype is a transit frame, not a sub-goal")
    if len(set(mapping)) != len(mapping):
        problems.append(f"several prototypes map to one sub-goal: {mapping}")
    if set(mapping) != set(g for g in golden["states"]):
        problems.append(f"state sets differ: inferred {sorted(map(str, mapping))} "
                        f"vs golden {sorted(golden['states'])}")
    if not problems:
        if mapping[rm.initial] != golden["initial"]:
            problems.append(f"initial state maps to {mapping[rm.initial]}")
        if mapping[rm.goal] != golden["goal"]:
            problems.append(f"goal state maps to {mapping[rm.goal]}")
        got = {(mapping[u], mapping[v]) for u, _, v in rm.transitions(self_loops=False)}
        want = {tuple(e) for e in golden["edges"]}
        if got != want:
            problems.append(f"edges differ: missing {sorted(want - got)}, extra {sorted(got - want)}")
    return {"match": not problems, "mapping": mapping, "problems": problems}


# -- training helpers ---------------------------------------------------------

def make_env(spec: bw.TaskSpec, rm: RewardMachine, labeler) -> RMEnv:
    return RMEnv(BlockWorldEnv(spec), rm, labeler)


def inferred_env(cfg: PipelineConfig, spec, rm, labeling) -> RMEnv:
    return make_env(spec, rm, FeatureLabeler(cfg.extractor(spec), labeling))


def run_pipeline(cfg: PipelineConfig, episodes: int | None = None, golden: bool = False):
    """demo-gen -> infer -> train, all in memory. Returns ``(trainer, learner, generated)``."""
    spec = cfg.task()
    x = cfg.extractor(spec)
    d = cfg["demos"]
    gen = generate_demos(spec, x, int(d["n"]), cfg.seed, bool(d["coverage"]),
                         int(d["dwell"]), int(d["transit"]))
    learner = cfg.learner().fit(gen.demos)
    tcfg = cfg.train_config()
    if episodes is not None:
        tcfg = TrainConfig(**{**tcfg.__dict__, "episodes": episodes})
    if golden:
        rm, labeler = golden_rm(spec, tcfg.gamma)
        env = make_env(spec, rm, labeler)
    else:
        env = inferred_env(cfg, spec, learner.reward_machine_, learner.labeling_)
    trainer = QRMTrainer(env, tcfg).seed_demos(gen.expert).run()
    return trainer, learner, gen


def summarize(values) -> dict:
    a = np.asarray(values, dtype=float)
    return {"mean": float(a.mean()), "std": float(a.std())}
