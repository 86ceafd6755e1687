from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import urbandit.policy as pol
from urbandit.aroe import build_grid, optimal_action_set, value_iterate
from urbandit.belief import InformationState
from urbandit.estimation import EstimatedModel
from urbandit.exceptions import ConfigError, DomainError
from urbandit.policy import (ALA, ALAFP, ALAConfig, ExplorationSchedule, FixedArm, IndexCache,
                             Myopic, RandomPolicy, confidence_radius, initialize,
                             optimistic_index, schedule_value, select_tau0, step)
from urbandit.simulation import arm_paths, simulate

from .conftest import random_instance


def chain_env(instance, seed, length=5000):
    """Callable environment returning the next state of the played arm's path."""
    paths = arm_paths(instance, length, seed)
    clock = {"i": 0}

    def env(arm):
        y = int(paths[arm][clock["i"]])
        clock["i"] += 1
        return y
    return env


class TestSchedule:
    def test_fixed_values(self):
        assert schedule_value(ExplorationSchedule.fixed(10), math.e) == pytest.approx(10.0)
        assert ExplorationSchedule.fixed(1)(100) == pytest.approx(4.6052, abs=1e-4)
        assert ExplorationSchedule.fixed(5)(1) == 0.0

    def test_adaptive(self):
        s = ExplorationSchedule.adaptive()
        assert s(1) == 0.0
        assert s.L_at(1) == 1.0
        vals = [s.L_at(t) for t in (1, 10, 10**3, 10**6)]
        assert vals == sorted(vals) and vals[-1] > vals[0]
        assert ExplorationSchedule.adaptive("sqrtlog").L_at(1) == 1.0

    def test_adaptive_rejects(self):
        with pytest.raises(ConfigError):
            ExplorationSchedule.adaptive(lambda t: 2.0 + math.log(t))
        with pytest.raises(ConfigError):
            ExplorationSchedule.adaptive(lambda t: 1.0 / t)
        with pytest.raises(ConfigError):
            ExplorationSchedule.adaptive("nope")
        with pytest.raises(ConfigError):
            ExplorationSchedule.fixed(0)

    def test_radius(self):
        assert confidence_radius(math.ceil(math.e ** 0.25), 1) > 0
        assert confidence_radius(int(round(math.e ** 1)), 4) == pytest.approx(
            math.sqrt(2 * math.log(3) / 4))
        assert math.sqrt(2 * 1 / 4) == pytest.approx(0.7071, abs=1e-4)
        assert confidence_radius(1, 10) == 0.0
        with pytest.raises(DomainError):
            confidence_radius(5, 0)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ALAConfig(index_budget=0)
        with pytest.raises(ConfigError):
            ALAConfig(tie_break="coin")
        assert ALAConfig().replace(tau0=3).tau0 == 3


class TestIndex:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.0, 2.0), st.integers(1, 8))
    def test_optimism(self, seed, radius, budget):
        inst = random_instance(seed % 1000)
        sol = value_iterate(build_grid(inst.sizes, 4), inst.transitions, inst.rewards)
        cache = IndexCache(sol)
        rng = np.random.default_rng(seed)
        info = InformationState((int(rng.integers(2)), int(rng.integers(2))),
                                tuple(rng.permutation([1, int(rng.integers(2, 9))]).tolist()))
        q = sol.q_values(info)
        for u in range(2):
            v, origin = optimistic_index(info, u, cache, float(q[u]), radius, budget, rng)
            assert v >= q[u]
            assert origin in ("center", "corner", "random")

    def test_zero_radius_is_center(self, two_arm):
        sol = value_iterate(build_grid(two_arm.sizes, 4), two_arm.transitions, two_arm.rewards)
        info = InformationState((0, 1), (1, 3))
        assert optimistic_index(info, 0, IndexCache(sol), 0.25, 0.0, 8,
                                np.random.default_rng(0)) == (0.25, "center")


class TestALA:
    def test_init_taus(self, two_arm):
        inst = random_instance(2, K=3)
        agent = initialize(inst.sizes, inst.rewards, ALAConfig(), chain_env(inst, 1))
        assert agent.state_.info.tau == (3, 2, 1)
        assert agent.state_.tables.plays.tolist() == [1, 1, 1]
        one = initialize((2,), (np.zeros(2),), ALAConfig(), lambda a: 0)
        assert one.state_.info.tau == (1,)

    def test_choose_before_init(self, two_arm):
        agent = ALA().start(two_arm.sizes, two_arm.rewards)
        with pytest.raises(DomainError):
            agent.choose(1)

    def test_first_step_exploits_uniform_estimate(self, two_arm):
        agent = initialize(two_arm.sizes, two_arm.rewards, ALAConfig(), chain_env(two_arm, 0))
        step(agent, 1, chain_env(two_arm, 0))
        assert agent.phase == "exploit"

    def test_phase_matches_exploration_set(self, two_arm):
        from urbandit.estimation import exploration_set
        cfg = ALAConfig(schedule=ExplorationSchedule.fixed(3.0), tau0=4, index_budget=4)
        env = chain_env(two_arm, 3)
        agent = initialize(two_arm.sizes, two_arm.rewards, cfg, env)
        for t in range(1, 200):
            W = exploration_set(agent.state_.tables, t, cfg.schedule(t))
            arm, _, phase = step(agent, t, env)
            assert (phase == "explore") == bool(W)
            if W:
                owners = {k for k, _ in W}
                assert arm in owners

    def test_dominance_exploits_arm0(self, dom):
        cfg = ALAConfig(schedule=ExplorationSchedule.fixed(2.0), tau0=4, index_budget=4)
        run = simulate(dom, ALA.from_config(cfg), 400, env_seed=2)
        exploit = [a for a, p in zip(run.arms, run.phases) if p == "exploit"]
        assert exploit and all(a == 0 for a in exploit)

    def test_true_model_consistency(self, two_arm, monkeypatch):
        monkeypatch.setattr(pol, "confidence_radius", lambda t, n: 0.0)
        cfg = ALAConfig(schedule=ExplorationSchedule.fixed(1e-9), tau0=6)
        env = chain_env(two_arm, 4)
        agent = initialize(two_arm.sizes, two_arm.rewards, cfg, env)
        ref = value_iterate(build_grid(two_arm.sizes, 6), two_arm.transitions, two_arm.rewards)
        P = tuple(np.asarray(p) for p in two_arm.transitions)
        truth = EstimatedModel(list(P), list(P))
        for t in range(2, 300):
            agent.state_.model = truth
            agent.state_.version = 0
            agent.state_.tables.visits = [v + 10**6 for v in agent.state_.tables.visits]
            info = agent.state_.info
            arm, _, phase = step(agent, t, env)
            assert phase == "exploit"
            assert arm in optimal_action_set(info, ref, gap_tol=1e-7)

    def test_determinism(self, two_arm):
        cfg = ALAConfig(schedule=ExplorationSchedule.fixed(2.0), tau0=4, index_budget=4,
                        tie_break="uniform")
        a = simulate(two_arm, ALA.from_config(cfg, seed=7), 300, env_seed=9)
        b = simulate(two_arm, ALA.from_config(cfg, seed=7), 300, env_seed=9)
        assert a.to_csv() == b.to_csv()

    def test_sklearn_params(self):
        a = ALA(tau0=5, index_budget=3)
        assert a.get_params()["tau0"] == 5
        assert a.set_params(seed=3).config.seed == 3


class TestALAFP:
    def test_choices_in_optimal_set(self, two_arm):
        cfg = ALAConfig(schedule=ExplorationSchedule.fixed(2.0), tau0=4)
        env = chain_env(two_arm, 5)
        agent = initialize(two_arm.sizes, two_arm.rewards, cfg, env, fp=True)
        for t in range(1, 300):
            step(agent, t, env)
        assert agent.choices
        for _, arm, opt in agent.choices:
            assert arm == min(opt)

    def test_dominance(self, dom):
        run = simulate(dom, ALAFP(ExplorationSchedule.fixed(2.0), tau0=3), 300, env_seed=1)
        assert all(a == 0 for _, a, _ in run.extra["fp_choices"])

    def test_singleton_matches_greedy(self, two_arm):
        cfg = ALAConfig(schedule=ExplorationSchedule.fixed(1e-9), tau0=50)
        env = chain_env(two_arm, 8)
        agent = initialize(two_arm.sizes, two_arm.rewards, cfg, env, fp=True)
        n = 0
        for t in range(1, 60):
            info = agent.state_.info
            arm, _, phase = step(agent, t, env)
            if phase == "exploit":
                n += 1
                assert arm == min(optimal_action_set(info, agent.state_.solution))
        assert n > 30


class TestSelectTau0:
    def test_threshold_met(self, two_arm):
        tau0, var, thr, ok = select_tau0(two_arm, 1000)
        assert ok and var < thr
        tau_big, *_ = select_tau0(two_arm, 10**6)
        assert tau_big >= tau0


class TestBaselines:
    def test_fixed_arm(self, two_arm):
        run = simulate(two_arm, FixedArm(1), 50, env_seed=0)
        assert set(run.arms[2:].tolist()) == {1}
        with pytest.raises(ConfigError):
            simulate(two_arm, FixedArm(4), 5, env_seed=0)

    def test_random_seeded(self, two_arm):
        a = simulate(two_arm, RandomPolicy(3), 100, env_seed=0).arms
        b = simulate(two_arm, RandomPolicy(3), 100, env_seed=0).arms
        assert np.array_equal(a, b) and set(a.tolist()) == {0, 1}

    def test_myopic(self, dom):
        run = simulate(dom, Myopic(dom.transitions), 50, env_seed=0)
        assert set(run.arms[2:].tolist()) == {0}
        with pytest.raises(ConfigError):
            Myopic().start(dom.sizes, dom.rewards)
