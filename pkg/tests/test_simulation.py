from __future__ import annotations

import numpy as np
import pytest

from urbandit.aroe import build_grid, value_iterate
from urbandit.exceptions import ConfigError, DomainError
from urbandit.markov import ergodicity_certificate, stationary_distribution
from urbandit.policy import ALAConfig, ExplorationSchedule
from urbandit.simulation import (REGRET_HEADER, RUN_HEADER, arm_paths, derive_seed, diagnostics,
                                 exploration_envelope, make_policy, regret_curve, simulate,
                                 simulate_many)


def test_derive_seed_stable():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(2, 1)


def test_paths_follow_chain(two_arm):
    path = np.array(arm_paths(two_arm, 200_000, 1)[1])
    P = two_arm.transitions[1]
    prev, nxt = path[:-1], path[1:]
    for i in range(2):
        freq = np.bincount(nxt[prev == i], minlength=2) / (prev == i).sum()
        np.testing.assert_allclose(freq, P[i], atol=0.01)
    np.testing.assert_allclose(np.bincount(path) / path.size, stationary_distribution(P), atol=0.01)


def test_paths_independent_of_policy(two_arm):
    a = simulate(two_arm, make_policy("fixed_arm:0", two_arm), 100, env_seed=3)
    b = simulate(two_arm, make_policy("fixed_arm:1", two_arm), 100, env_seed=3)
    paths = arm_paths(two_arm, 102, 3)
    assert a.observations[2:].tolist() == paths[0][2:]
    assert b.observations[2:].tolist() == paths[1][2:]


def test_run_record_layout(two_arm):
    run = simulate(two_arm, make_policy("random", two_arm, seed=1), 20, env_seed=0)
    assert run.arms[:2].tolist() == [0, 1]
    assert run.phases[:2] == ["init", "init"]
    text = run.to_csv()
    lines = text.splitlines()
    assert lines[0] == ",".join(RUN_HEADER)
    assert len(lines) == 23
    assert lines[1].startswith("-1,0,")
    assert run.decision_reward() == pytest.approx(run.rewards[2:].sum())
    infos = list(run.information_states())
    assert len(infos) == 20 and infos[0] == run.info0()


def test_horizon_check(two_arm):
    with pytest.raises(DomainError):
        simulate(two_arm, make_policy("random", two_arm), 0, env_seed=0)


def test_make_policy_errors(two_arm):
    with pytest.raises(ConfigError):
        make_policy("fixed_arm", two_arm)
    with pytest.raises(ConfigError):
        make_policy("ucb", two_arm)
    p = make_policy("ala", two_arm, {"tau0": 3}, seed=5)
    assert p.tau0 == 3 and p.seed == 5


def test_simulate_many_deterministic(two_arm):
    cfg = ALAConfig(schedule=ExplorationSchedule.fixed(2.0), tau0=3, index_budget=2)
    a = simulate_many(two_arm, "ala", cfg, 60, 3, seed=8)
    b = simulate_many(two_arm, "ala", cfg, 60, 3, seed=8)
    assert [r.to_csv() for r in a] == [r.to_csv() for r in b]
    assert a[0].to_csv() != a[1].to_csv()


def test_single_arm_regret_is_zero(single_arm):
    """Only one arm to play: exact regret is zero in mean, delta regret zero per run."""
    runs = simulate_many(single_arm, "fixed_arm:0", None, 30, 400, seed=0)
    rep = regret_curve(runs, single_arm, [5, 10, 30], mode="exact")
    assert np.all(np.abs(rep.regret) <= 4 * rep.stderr)
    sol = value_iterate(build_grid(single_arm.sizes, 2), single_arm.transitions, single_arm.rewards)
    delta = regret_curve(runs[:3], single_arm, [30], mode="delta", solution=sol)
    np.testing.assert_allclose(delta.per_run, 0.0, atol=0.0)
    assert rep.to_csv().splitlines()[0] == ",".join(REGRET_HEADER)


def test_delta_regret(dom):
    sol = value_iterate(build_grid(dom.sizes, 3), dom.transitions, dom.rewards)
    runs = simulate_many(dom, "fixed_arm:1", None, 40, 2, seed=0)
    rep = regret_curve(runs, dom, [10, 40], mode="delta", solution=sol)
    np.testing.assert_allclose(rep.regret, [10.0, 40.0], atol=1e-7)
    exact = regret_curve(runs, dom, [10, 40], mode="exact")
    np.testing.assert_allclose(exact.regret, [10.0, 40.0], atol=1e-9)
    with pytest.raises(ConfigError):
        regret_curve(runs, dom, [10], mode="delta")
    with pytest.raises(ConfigError):
        regret_curve(runs, dom, [10], mode="other")
    with pytest.raises(DomainError):
        regret_curve(runs, dom, [41])


def test_diagnostics(two_arm):
    sched = ExplorationSchedule.fixed(2.0)
    cfg = ALAConfig(schedule=sched, tau0=3, index_budget=2)
    run = simulate_many(two_arm, "ala", cfg, 300, 1, seed=2, track_beliefs=True)[0]
    cert = ergodicity_certificate(two_arm)
    loose = diagnostics(run, two_arm, 2.0, sched, cert)
    assert loose.belief_error_events == 0
    assert loose.exploit_steps + loose.exploration_steps == 300
    assert loose.exploration_within_envelope
    assert loose.exploration_envelope == exploration_envelope(two_arm, sched, 300, cert.T_max)
    tight = diagnostics(run, two_arm, 0.0, sched, cert)
    assert tight.belief_error_events > 0
