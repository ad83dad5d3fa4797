"""Reward machine construction from clustered demonstrations.

Pipeline: prototypes -> labeling function -> abstract demonstrations ->
transition map -> goal state -> potentials. States and propositions share
indices: proposition ``p_i`` holds near prototype ``i`` and every inferred
edge labelled ``p_i`` leads to state ``u_i``.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .cluster import NOISE, DbscanParams, dbscan, extract_prototypes
from .exceptions import (AmbiguousLabelError, ConfigError, DegenerateTaskError, DimensionError,
                         InconsistentGoalError, InitialStateError, IoError, NoClustersError,
                         SeparationError, StateIndexError, UnknownPropositionError,
                         UnreachableGoalError, ValidationError)
from .trajectories import AbstractDemonstration, DemonstrationSet, Trajectory

RM_FORMAT = "rmlearn-rm/1"


def min_prototype_separation(vectors) -> float:
    """Smallest pairwise Euclidean distance between prototype vectors (inf if < 2)."""
    P = np.asarray(vectors, dtype=np.float64)
    if len(P) < 2:
        return math.inf
    d = np.sqrt(((P[:, None, :] - P[None, :, :]) ** 2).sum(-1))
    return float(d[np.triu_indices(len(P), 1)].min())


@dataclass(frozen=True, eq=False)
class LabelingFn:
    """Proposition ``i`` is true iff the (normalized) vector lies strictly within
    ``kappa`` of prototype ``i``.

    Prototypes must be pairwise more than ``2 * kappa`` apart so that at most
    one proposition can hold.
    """

    prototypes: np.ndarray
    kappa: float
    offset: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        P = np.array([getattr(p, "vector", p) for p in self.prototypes], dtype=np.float64)
        if P.ndim != 2 or len(P) == 0:
            raise ValidationError("labeling function needs at least one prototype")
        if not self.kappa > 0:
            raise ConfigError(f"kappa must be > 0, got {self.kappa}")
        P.setflags(write=False)
        object.__setattr__(self, "prototypes", P)
        sep = min_prototype_separation(P)
        if not sep > 2 * self.kappa:
            raise SeparationError(
                f"kappa={self.kappa:g} is too large: prototypes are only {sep:.6g} apart, "
                f"which must exceed 2*kappa={2 * self.kappa:g}; use kappa < {sep / 2:.6g}")

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    @property
    def n_props(self) -> int:
        return self.prototypes.shape[0]

    @property
    def min_separation(self) -> float:
        return min_prototype_separation(self.prototypes)

    def _normalize(self, v):
        if self.offset is not None:
            v = (v - self.offset) / self.scale
        return v

    def label_id(self, v) -> int:
        """Index of the single true proposition, or -1."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DimensionError(f"vector of shape {v.shape} does not match prototype dim {self.dim}")
        d = np.sqrt(((self.prototypes - self._normalize(v)) ** 2).sum(-1))
        hits = np.flatnonzero(d < self.kappa)
        if hits.size > 1:
            raise AmbiguousLabelError(f"propositions {hits.tolist()} hold at once; lower kappa")
        return int(hits[0]) if hits.size else -1

    def __call__(self, v) -> frozenset:
        return label(self, v)


def label(L: LabelingFn, v) -> frozenset:
    i = L.label_id(v)
    return frozenset() if i < 0 else frozenset((i,))


def abstract_demonstration(L: LabelingFn, t: Trajectory) -> AbstractDemonstration:
    return AbstractDemonstration(tuple(label(L, v) for v in t.frames))


def infer_delta_u(demos, k: int) -> dict:
    """Transition map ``{(u, p): u'}`` from abstract demonstrations.

    Each demo is walked from ``u_0``; the first time proposition ``p_i`` is
    seen in state ``u`` the edge ``(u, p_i) -> u_i`` is recorded. Empty label
    sets leave the state unchanged.
    """
    edges: dict = {}
    for d in demos:
        u = 0
        for props in d:
            for p in sorted(props):
                if not 0 <= p < k:
                    raise UnknownPropositionError(f"proposition {p} unknown; only {k} prototypes")
                if (u, p) not in edges:
                    edges[(u, p)] = p
                u = edges[(u, p)]
    return edges


def _walk(demo, edges, start=0):
    u, left = start, False
    for props in demo:
        for p in sorted(props):
            u = edges.get((u, p), u)
            left = left or u != start
    return u, left


def identify_goal(demos, edges: dict) -> int:
    """The RM state every demonstration ends in."""
    walks = [_walk(d, edges) for d in demos]
    if not any(left for _, left in walks):
        raise DegenerateTaskError("no demonstration ever leaves the initial state; "
                                  "check kappa and the clustering parameters")
    finals = sorted({u for u, _ in walks})
    if len(finals) > 1:
        raise InconsistentGoalError(f"demonstrations end in different RM states {finals}")
    return finals[0]


def compute_potentials(edges: dict, goal: int, gamma: float, n_states: int | None = None):
    """Edge distance to the goal and ``gamma ** distance`` for every state.

    Self-loops are ignored. Returns ``(d_goal, potentials)`` as tuples.
    """
    if not 0 < gamma <= 1:
        raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")
    states = {goal} | {u for u, _ in edges} | set(edges.values())
    n = max(states) + 1 if n_states is None else n_states
    preds: dict = {}
    for (u, _), v in edges.items():
        if u != v:
            preds.setdefault(v, set()).add(u)
    dist = [math.inf] * n
    dist[goal] = 0
    queue = deque([goal])
    while queue:
        v = queue.popleft()
        for u in sorted(preds.get(v, ())):
            if dist[u] == math.inf:
                dist[u] = dist[v] + 1
                queue.append(u)
    bad = [u for u in range(n) if dist[u] == math.inf]
    if bad:
        raise UnreachableGoalError(f"goal u{goal} is unreachable from states {bad}")
    d_goal = tuple(int(x) for x in dist)
    return d_goal, tuple(gamma ** d for d in d_goal)


@dataclass(frozen=True, eq=False)
class RewardMachine:
    n_states: int
    goal: int
    edges: dict
    gamma: float
    d_goal: tuple
    potentials: tuple
    initial: int = 0
    names: tuple | None = field(default=None)

    @classmethod
    def build(cls, n_states: int, edges: dict, goal: int, gamma: float, names=None) -> "RewardMachine":
        for (u, p), v in edges.items():
            if not (0 <= u < n_states and 0 <= v < n_states):
                raise StateIndexError(f"edge ({u}, p{p}) -> {v} leaves the state set")
        if not 0 <= goal < n_states:
            raise StateIndexError(f"goal {goal} out of range")
        d, psi = compute_potentials(edges, goal, gamma, n_states)
        return cls(n_states, goal, dict(edges), gamma, d, psi,
                   names=tuple(names) if names is not None else None)

    @property
    def states(self) -> range:
        return range(self.n_states)

    def next_state(self, u: int, p: int) -> int:
        return self.edges.get((u, p), u)

    def transitions(self, self_loops: bool = True) -> list[tuple[int, int, int]]:
        """``(u, p, u')`` triples in sorted order."""
        return sorted((u, p, v) for (u, p), v in self.edges.items() if self_loops or u != v)

    def state_name(self, u: int) -> str:
        return self.names[u] if self.names else f"u{u}"


@dataclass(frozen=True)
class RmRunState:
    current: int = 0
    done: bool = False


def shaped_reward(rm: RewardMachine, u: int, u_next: int) -> float:
    sparse = 1.0 if (u_next == rm.goal and u != rm.goal) else 0.0
    return sparse + rm.gamma * rm.potentials[u_next] - rm.potentials[u]


def rm_step(rm: RewardMachine, run: RmRunState, props) -> tuple[RmRunState, float]:
    props = tuple(props)
    if len(props) > 1:
        raise AmbiguousLabelError(f"{len(props)} propositions hold at once ({sorted(props)}); "
                                  "kappa is misconfigured")
    if not 0 <= run.current < rm.n_states:
        raise StateIndexError(f"RM state {run.current} out of range")
    u = run.current
    u_next = rm.next_state(u, props[0]) if props else u
    return RmRunState(u_next, u_next == rm.goal), shaped_reward(rm, u, u_next)


# -- graph export & serialization ---------------------------------------------

def to_dot(rm: RewardMachine, self_loops: bool = False) -> str:
    lines = ["digraph RM {", "  rankdir=LR;", '  node [shape=circle];']
    for u in rm.states:
        shape = "doublecircle" if u == rm.goal else "circle"
        lbl = f"{rm.state_name(u)}\\nd={rm.d_goal[u]}\\npsi={rm.potentials[u]:.6g}"
        lines.append(f'  u{u} [label="{lbl}", shape={shape}];')
    lines.append(f"  start [shape=point]; start -> u{rm.initial};")
    for u, p, v in rm.transitions(self_loops):
        lines.append(f'  u{u} -> u{v} [label="p{p}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_graph(rm: RewardMachine, path, self_loops: bool = False) -> None:
    try:
        Path(path).write_text(to_dot(rm, self_loops))
    except OSError as exc:
        raise IoError(f"cannot write graph to {path}: {exc}") from exc


def rm_to_dict(rm: RewardMachine, labeling: LabelingFn | None = None, sources=None) -> dict:
    d = {
        "format": RM_FORMAT,
        "n_states": rm.n_states,
        "initial": rm.initial,
        "goal": rm.goal,
        "gamma": rm.gamma,
        "edges": [list(t) for t in rm.transitions()],
        "d_goal": list(rm.d_goal),
        "potentials": list(rm.potentials),
    }
    if rm.names:
        d["names"] = list(rm.names)
    if labeling is not None:
        d["kappa"] = labeling.kappa
        d["prototypes"] = labeling.prototypes.tolist()
        d["normalization"] = None if labeling.offset is None else {
            "offset": labeling.offset.tolist(), "scale": labeling.scale.tolist()}
    if sources is not None:
        d["prototype_sources"] = [list(s) for s in sources]
    return d


def rm_from_dict(d: dict) -> tuple[RewardMachine, LabelingFn | None]:
    if d.get("format") != RM_FORMAT:
        raise ConfigError(f"not a reward machine file (format {d.get('format')!r})")
    try:
        edges = {(int(u), int(p)): int(v) for u, p, v in d["edges"]}
        rm = RewardMachine.build(int(d["n_states"]), edges, int(d["goal"]), float(d["gamma"]),
                                 names=d.get("names"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed reward machine file: {exc!r}") from exc
    labeling = None
    if d.get("prototypes"):
        norm = d.get("normalization")
        labeling = LabelingFn(np.array(d["prototypes"]), float(d["kappa"]),
                              None if not norm else np.array(norm["offset"]),
                              None if not norm else np.array(norm["scale"]))
    return rm, labeling


def save_rm(path, rm: RewardMachine, labeling: LabelingFn | None = None, sources=None) -> None:
    try:
        Path(path).write_text(json.dumps(rm_to_dict(rm, labeling, sources), indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_rm(path) -> tuple[RewardMachine, LabelingFn | None]:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise IoError(f"reward machine file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return rm_from_dict(d)


# -- estimator ----------------------------------------------------------------

class RewardMachineLearner(BaseEstimator):
    """Infer a reward machine from unlabeled demonstrations.

    ``fit`` clusters every frame, picks one prototype per cluster, labels the
    demonstrations against the prototypes and builds the transition map,
    goal and potentials.

    Parameters
    ----------
    eps_cluster, min_points : DBSCAN neighborhood radius and density.
    kappa : labeling threshold in feature space.
    gamma : discount used by the potentials.
    normalize : standardize each feature before clustering and labeling.

    Attributes
    ----------
    clustering_, prototypes_, labeling_, abstract_demos_, reward_machine_, report_
    """

    def __init__(self, eps_cluster=0.5, min_points=5, kappa=0.1, gamma=0.9, normalize=False):
        self.eps_cluster = eps_cluster
        self.min_points = min_points
        self.kappa = kappa
        self.gamma = gamma
        self.normalize = normalize

    def fit(self, demos, y=None):
        if not isinstance(demos, DemonstrationSet):
            demos = DemonstrationSet.from_arrays(demos)
        X = demos.stack()
        offset = scale = None
        if self.normalize:
            offset = X.mean(axis=0)
            scale = X.std(axis=0)
            scale[scale == 0] = 1.0
            work = DemonstrationSet.from_arrays(
                [(t.frames - offset) / scale for t in demos], [t.id for t in demos])
        else:
            work = demos

        clustering = dbscan(work.stack(), DbscanParams(self.eps_cluster, self.min_points))
        if clustering.k == 0:
            raise NoClustersError(
                f"no clusters with eps={self.eps_cluster:g}, min_points={self.min_points}: "
                f"all {len(X)} points are noise; lower min_points or raise eps")
        first = {int(clustering.labels[r]) for r in demos.first_frame_rows()}
        if NOISE in first or len(first) != 1:
            raise InitialStateError(
                f"first frames fall in clusters {sorted(first)} (-1 = noise); they must share one "
                f"cluster. Adjust eps={self.eps_cluster:g} or min_points={self.min_points}")
        c0 = first.pop()
        clustering = clustering.relabel([c0] + [c for c in range(clustering.k) if c != c0])

        prototypes = extract_prototypes(work, clustering)
        labeling = LabelingFn(np.array([p.vector for p in prototypes]), self.kappa, offset, scale)
        abstract = [abstract_demonstration(labeling, t) for t in demos]
        edges = infer_delta_u(abstract, clustering.k)
        try:
            goal = identify_goal(abstract, edges)
            rm = RewardMachine.build(clustering.k, edges, goal, self.gamma)
        except UnreachableGoalError as exc:
            raise UnreachableGoalError(
                f"{exc}. Some clusters are never visited by the labelled demonstrations; "
                f"raise kappa={self.kappa:g} or raise min_points={self.min_points}") from None

        self.demonstrations_ = demos
        self.clustering_ = clustering
        self.prototypes_ = prototypes
        self.labeling_ = labeling
        self.abstract_demos_ = abstract
        self.reward_machine_ = rm
        sep = labeling.min_separation
        self.report_ = {
            "k": clustering.k,
            "n_points": int(len(X)),
            "n_noise": clustering.n_noise,
            "cluster_sizes": clustering.sizes(),
            "min_prototype_separation": sep if math.isfinite(sep) else None,
            "separation_margin": (sep - 2 * self.kappa) if math.isfinite(sep) else None,
            "eps_cluster": self.eps_cluster,
            "min_points": self.min_points,
            "kappa": self.kappa,
            "gamma": self.gamma,
            "goal": rm.goal,
            "prototype_sources": [list(p.source) for p in prototypes],
            "edges": [list(t) for t in rm.transitions()],
        }
        return self

    def predict(self, X):
        """Proposition id per row of ``X`` (``-1`` when none holds)."""
        check_is_fitted(self, "labeling_")
        X = check_array(X, dtype=np.float64)
        return np.array([self.labeling_.label_id(v) for v in X], dtype=np.int64)

    def abstract(self, trajectory) -> AbstractDemonstration:
        check_is_fitted(self, "labeling_")
        if not isinstance(trajectory, Trajectory):
            trajectory = Trajectory("0", trajectory)
        return abstract_demonstration(self.labeling_, trajectory)
