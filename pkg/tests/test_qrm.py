import math
import statistics

import numpy as np
import pytest

from oracles import (argmax_set, deterministic_value_iteration, enumerate_env, one_hot,
                     product_value_iteration)
from rmlearn.blockworld import expert_demos, load_task_spec
from rmlearn.exceptions import (ConfigError, IoError, ParseError, RangeError,
                                ReplayMismatchError, StateIndexError)
from rmlearn.pipeline import golden_rm, make_env
from rmlearn.qrm import (QRMAgent, QRMTrainer, QTables, ReplayBuffers, RMEnv, TrainConfig,
                         Transition, epsilon_at, evaluate_greedy, q_update, read_checkpoint,
                         seed_buffers_from_demos, td_target, train, write_metrics_csv)
from rmlearn.rmcore import RewardMachine, RmRunState


class Corridor:
    """Cells 0..n-1, action 0 = left, 1 = right; labels p_c at cell c > 0."""

    def __init__(self, n=3, step_cap=20):
        self.n, self.n_actions, self.step_cap = n, 2, step_cap

    def reset(self, seed=0):
        return 0

    def step(self, s, a):
        return max(0, s - 1) if a == 0 else min(self.n - 1, s + 1)

    @staticmethod
    def key(s):
        return (s,)

    def error(self, s):
        return float(self.n - 1 - s)


def _corridor_labeler(s, frame=0):
    return frozenset((s,)) if s > 0 else frozenset()


def _corridor_env():
    rm = RewardMachine.build(3, {(0, 1): 1, (1, 2): 2}, 2, 0.9)
    return RMEnv(Corridor(), rm, _corridor_labeler)


# -- arithmetic ---------------------------------------------------------------

def test_td_target_examples():
    assert td_target(0.0, 0.9, 0.5, False) == pytest.approx(0.45, abs=1e-15)
    assert td_target(0.3, 0.9, 7.0, True) == 0.3
    assert td_target(1.0, 0.9, 0.0, True) == 1.0


def test_q_update_examples():
    t = QTables(2, 4)
    tr = Transition((0,), 2, 1.0, (1,), 0, 1, True)
    q_update(t, [tr], 0.1, 0.9)
    assert t.get(0, (0,), 2) == pytest.approx(0.1, abs=1e-15)
    q_update(t, [tr], 1.0, 0.9)
    assert t.get(0, (0,), 2) == 1.0
    with pytest.raises(StateIndexError):
        q_update(t, [tr._replace(u=5)], 0.1, 0.9)


def test_cross_table_bootstrap():
    t = QTables(2, 2)
    t.set(0, (9,), 0, 100.0)     # same-state table: must be ignored
    t.set(1, (9,), 1, 5.0)
    q_update(t, [Transition((0,), 0, 0.0, (9,), 0, 1, False)], 1.0, 0.9)
    assert t.get(0, (0,), 0) == pytest.approx(4.5)


def test_epsilon_schedule():
    cfg = TrainConfig(episodes=101)
    assert epsilon_at(cfg, 0) == pytest.approx(0.7)
    assert epsilon_at(cfg, 50) == pytest.approx(math.sqrt(0.07), abs=1e-12)
    assert epsilon_at(cfg, 100) == pytest.approx(0.1, abs=1e-12)
    eps = [epsilon_at(cfg, e) for e in range(101)]
    assert all(a >= b for a, b in zip(eps, eps[1:]))
    assert epsilon_at(TrainConfig(episodes=1), 0) == 0.7
    with pytest.raises(RangeError):
        epsilon_at(cfg, 101)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(gamma=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(alpha=1.5)
    with pytest.raises(ConfigError):
        TrainConfig(eps_start=0.1, eps_end=0.5)


def test_greedy_tie_break_and_missing_entries():
    t = QTables(1, 4)
    assert t.greedy(0, (0,)) == 0
    t.set(0, (0,), 0, -1.0)
    assert t.greedy(0, (0,)) == 1          # unseen entries read as 0
    t.set(0, (0,), 3, 0.5)
    t.set(0, (0,), 2, 0.5)
    assert t.greedy(0, (0,)) == 2
    assert t.values(0, (0,)).tolist() == [-1.0, 0.0, 0.5, 0.5]
    assert t.row_max(0, (1,)) == 0.0


def test_buffer_fifo_eviction():
    b = ReplayBuffers(2, capacity=3)
    for i in range(5):
        b.append(Transition((i,), 0, 0.0, (i,), 1, 1, False))
    assert [tr.s for tr in b[1]] == [(2,), (3,), (4,)]
    assert len(b) == 3 and len(b[0]) == 0
    assert b.sample(0, 4, np.random.default_rng(0)) == []
    assert len(b.sample(1, 16, np.random.default_rng(0))) == 3


# -- demos --------------------------------------------------------------------

def _stack2_golden_env():
    spec = load_task_spec("stack2")
    rm, labeler = golden_rm(spec, 0.9)
    return spec, make_env(spec, rm, labeler)


def test_seed_buffers_stack2():
    spec, env = _stack2_golden_env()
    b = ReplayBuffers(env.rm.n_states)
    assert seed_buffers_from_demos(b, expert_demos(spec, 1), env) == 2
    (t0,), (t1,) = b[0], b[1]
    assert (t0.u, t0.u2, t1.u, t1.u2) == (0, 1, 1, 2)
    assert abs(t0.r) <= 1e-12 and t1.r == pytest.approx(1.0, abs=1e-12)
    assert t1.done and not t0.done


def test_seed_buffers_mismatch():
    spec, env = _stack2_golden_env()
    demo = expert_demos(spec, 1)[0]
    bad = demo._replace(states=[demo.states[0], demo.states[0], demo.states[2]])
    with pytest.raises(ReplayMismatchError):
        seed_buffers_from_demos(ReplayBuffers(3), [bad], env)


# -- training loop ------------------------------------------------------------

def test_zero_episodes():
    tables, metrics = train(_corridor_env(), TrainConfig(episodes=0))
    assert metrics == [] and tables == QTables(3, 2)


def test_training_is_deterministic():
    cfg = TrainConfig(episodes=40, seed=3)
    a = train(_corridor_env(), cfg)
    b = train(_corridor_env(), cfg)
    assert a[1] == b[1] and a[0] == b[0]
    assert [m[0] for m in a[1]] == list(range(5, 41, 5))


def test_corridor_matches_value_iteration():
    env = _corridor_env()
    cfg = TrainConfig(episodes=300, alpha=0.5, updates_per_episode=4, seed=1)
    tables, metrics = train(env, cfg)
    states, succ, labels = enumerate_env(env.env, env.labeler, 0)
    Q = product_value_iteration(one_hot(succ), labels, 3, env.rm.edges, 2, 0.9,
                                env.rm.potentials)
    # walk the greedy policy and compare argmax sets along the way
    s, u = 0, 0
    for _ in range(10):
        si = states.index(s)
        assert tables.greedy(u, (s,)) in argmax_set(Q[u, si])
        s, run, _ = env.transition(s, RmRunState(u), tables.greedy(u, (s,)), 0)
        u = run.current
        if run.done:
            break
    assert u == 2
    assert metrics[-1][2] == 0.0 and metrics[-1][1] == pytest.approx(1.0)


def _oracle_tables(env, spec):
    states, succ, labels = enumerate_env(env.env, env.labeler, env.env.reset(0))
    rm = env.rm
    Q = deterministic_value_iteration(succ, labels, rm.n_states, rm.edges, rm.goal, rm.gamma,
                                      rm.potentials)
    index = {env.env.key(s): i for i, s in enumerate(states)}
    tables = QTables(rm.n_states, env.n_actions)
    s, u = env.env.reset(0), rm.initial
    for t in range(env.step_cap):
        row = Q[u, index[env.env.key(s)]]
        for a, q in enumerate(row):
            tables.set(u, env.env.key(s), a, float(q))
        s, run, _ = env.transition(s, RmRunState(u), int(np.argmax(row)), t + 1)
        u = run.current
        if run.done:
            break
    return tables


def test_oracle_tables_reach_goal():
    spec, env = _stack2_golden_env()
    res = evaluate_greedy(env, _oracle_tables(env, spec), 0)
    assert res.placement_error == 0.0
    assert res.total_reward == pytest.approx(1.0, abs=1e-12)
    assert res.rm_trace == (0, 1, 2)


def test_untrained_tables_take_action_zero():
    spec, env = _stack2_golden_env()
    res = evaluate_greedy(env, QTables(env.rm.n_states, env.n_actions), 0)
    assert res.rm_trace == (0,)
    assert res.total_reward <= 0
    assert res.placement_error == pytest.approx(
        env.env.error(env.env.reset(0)))    # action 0 is (0,0)->(0,0): a no-op


def test_trained_stack2_matches_oracle_policy():
    spec, env = _stack2_golden_env()
    tables, metrics = train(env, TrainConfig(episodes=300, seed=0), expert_demos(spec, 1))
    oracle = _oracle_tables(env, spec)
    assert metrics[-1][2] == 0.0
    s, u = env.env.reset(0), 0
    while u != env.rm.goal:
        k = env.env.key(s)
        assert oracle.get(u, k, tables.greedy(u, k)) == pytest.approx(oracle.row_max(u, k))
        s, run, _ = env.transition(s, RmRunState(u), tables.greedy(u, k), 0)
        u = run.current


def test_demo_seeding_speeds_up_first_goal():
    spec, env = _stack2_golden_env()
    demos = expert_demos(spec, 1)
    with_demos, without = [], []
    for seed in range(10):
        cfg = TrainConfig(episodes=60, seed=seed)
        a = QRMTrainer(env, cfg).seed_demos(demos).run()
        b = QRMTrainer(env, cfg).run()
        with_demos.append(a.first_goal_episode if a.first_goal_episode is not None else 61)
        without.append(b.first_goal_episode if b.first_goal_episode is not None else 61)
    assert statistics.median(with_demos) <= statistics.median(without)


# -- checkpoints & metrics ----------------------------------------------------

def test_checkpoint_resume_is_exact(tmp_path):
    spec, env = _stack2_golden_env()
    demos = expert_demos(spec, 1)
    cfg = TrainConfig(episodes=40, seed=2)
    full = QRMTrainer(env, cfg).seed_demos(demos).run()
    part = QRMTrainer(env, cfg).seed_demos(demos).run(until=15)
    part.save(tmp_path / "ck.rmq")
    resumed = QRMTrainer.load(tmp_path / "ck.rmq", env).run()
    assert resumed.metrics == full.metrics
    assert resumed.tables == full.tables
    header, tables, buffers = read_checkpoint(tmp_path / "ck.rmq")
    assert header["episode"] == 15 and len(buffers) == 3


def test_checkpoint_errors(tmp_path):
    with pytest.raises(IoError):
        read_checkpoint(tmp_path / "none.rmq")
    (tmp_path / "bad.rmq").write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(ParseError):
        read_checkpoint(tmp_path / "bad.rmq")


def test_metrics_csv(tmp_path):
    write_metrics_csv([(5, 1.0, 0.0, (0, 1, 2))], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines() == [
        "episode,total_reward,placement_error,rm_trace", "5,1.0,0.0,0-1-2"]


def test_agent_estimator():
    env = _corridor_env()
    agent = QRMAgent(episodes=200, alpha=0.5, updates_per_episode=4, seed=1).fit(env)
    assert agent.predict([((0,), 0), ((1,), 1)]).tolist() == [1, 1]
    assert agent.evaluate().placement_error == 0.0
    assert agent.get_params()["episodes"] == 200
