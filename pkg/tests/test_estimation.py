from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urbandit.estimation import (CountTables, concentration_report, decade_buckets, estimate,
                                 estimate_arm, exploration_set, record_step)
from urbandit.exceptions import DomainError
from urbandit.markov import validate_instance
from urbandit.policy import ExplorationSchedule
from urbandit.simulation import arm_paths


class TestRecordStep:
    def test_consecutive_plays(self):
        tb = CountTables.zeros([2, 2])
        assert not record_step(tb, None, 1, None, 0)
        assert record_step(tb, 1, 1, 0, 1)
        assert tb.transitions[1][0, 1] == 1
        assert tb.visits[1][0] == 1
        assert tb.plays[1] == 2

    def test_alternating_plays(self):
        tb = CountTables.zeros([2, 2])
        prev = prev_obs = None
        for arm, obs in [(0, 1), (1, 0), (0, 0), (1, 1)]:
            record_step(tb, prev, arm, prev_obs, obs)
            prev, prev_obs = arm, obs
        assert all(m.sum() == 0 for m in tb.transitions)
        assert tb.plays.tolist() == [2, 2]

    def test_label_errors(self):
        tb = CountTables.zeros([2, 3])
        with pytest.raises(DomainError):
            record_step(tb, None, 0, None, 2)
        with pytest.raises(DomainError):
            record_step(tb, None, 2, None, 0)
        with pytest.raises(DomainError):
            record_step(tb, 1, 1, 5, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 3)), max_size=60))
    def test_counts_stay_consistent(self, seq):
        sizes = [2, 3, 4]
        tb = CountTables.zeros(sizes)
        prev = prev_obs = None
        for arm, y in seq:
            y %= sizes[arm]
            record_step(tb, prev, arm, prev_obs, y)
            prev, prev_obs = arm, y
            assert tb.consistent()
        assert tb.plays.sum() == len(seq)


class TestEstimate:
    def test_uniform_when_empty(self):
        est = estimate(CountTables.zeros([2, 3]))
        np.testing.assert_allclose(est.raw[0], 0.5)
        np.testing.assert_allclose(est.normalized[1], 1 / 3)

    def test_normalized_counts(self):
        raw, norm = estimate_arm(np.array([[3, 7], [5, 5]]), np.array([10, 10]))
        np.testing.assert_allclose(raw[0], [0.3, 0.7])
        np.testing.assert_allclose(norm[0], [0.3, 0.7])

    def test_zero_cell_indicator(self):
        raw, norm = estimate_arm(np.array([[0, 10], [1, 1]]), np.array([10, 2]))
        np.testing.assert_allclose(raw[0], [0.1, 1.0])
        np.testing.assert_allclose(norm[0], [1 / 11, 10 / 11])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 5), st.integers(0, 10**6))
    def test_positive_lower_bound(self, n, seed):
        rng = np.random.default_rng(seed)
        N = rng.integers(0, 20, (n, n)) * (rng.random((n, n)) < 0.6)
        C = N.sum(axis=1)
        _, p = estimate_arm(N, C)
        np.testing.assert_allclose(p.sum(axis=1), 1.0)
        assert np.all(p >= 1.0 / (n * (C[:, None] + n)) - 1e-15)

    def test_law_of_large_numbers(self):
        inst = validate_instance({"arms": [{"transition": [[0.2, 0.5, 0.3], [0.6, 0.1, 0.3],
                                                           [0.25, 0.25, 0.5]], "rewards": [0, 1, 2]}]})
        path = arm_paths(inst, 10**5, 7)[0]
        tb = CountTables.zeros(inst.sizes)
        prev = None
        for y in path:
            record_step(tb, None if prev is None else 0, 0, prev, int(y))
            prev = int(y)
        p = estimate(tb).normalized[0]
        assert np.abs(p - inst.transitions[0]).sum(axis=1).max() < 0.02


class TestExplorationSet:
    def test_empty_at_one(self):
        sched = ExplorationSchedule.fixed(10.0)
        assert sched(1) == 0.0
        assert exploration_set(CountTables.zeros([2, 2]), 1, sched(1)) == []

    def test_deficient_pair(self):
        tb = CountTables.zeros([2, 2])
        for v in tb.visits:
            v[:] = 10
        tb.visits[1][0] = 5
        f = ExplorationSchedule.fixed(10.0)(2)
        assert f == pytest.approx(6.931, abs=1e-3)
        assert exploration_set(tb, 2, f) == [(1, 0)]
        assert exploration_set(tb, 2, 5.0) == []

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 30), min_size=4, max_size=4), st.floats(0, 40))
    def test_literal_membership(self, counts, f):
        tb = CountTables.zeros([2, 2])
        tb.visits[0][:] = counts[:2]
        tb.visits[1][:] = counts[2:]
        W = set(exploration_set(tb, 5, f))
        assert W == {(k, i) for k in range(2) for i in range(2) if counts[2 * k + i] < f}

    def test_bad_t(self):
        with pytest.raises(DomainError):
            exploration_set(CountTables.zeros([2]), 0, 0.0)


class TestConcentration:
    def test_buckets(self):
        assert decade_buckets(1000) == [(1, 9), (10, 99), (100, 999), (1000, 1000)]

    def test_vacuous_threshold(self, two_arm):
        rep = concentration_report(two_arm, L=2.0, epsilon=1.0, horizon=300, n_runs=2, seed=1)
        assert rep.raw_exceed.max() == 0 and rep.norm_exceed.max() == 0
        assert rep.fraction_below() == 1.0
        assert rep.exploit_steps.sum() > 0

    def test_envelopes(self, two_arm):
        rep = concentration_report(two_arm, L=2.0, epsilon=0.1, horizon=50, n_runs=1)
        first = np.mean([2 / t ** 2 for t in range(1, 10)])
        assert rep.raw_envelope[0] == pytest.approx(first)
        assert rep.norm_envelope[0] == pytest.approx(first * (2 * 2 + 2) / 2)
        assert len(rep.rows()) == 2
