"""Environment simulation, regret curves and run diagnostics.

Arm sample paths come from one counter-seeded stream per ``(env_seed, arm)``,
so every policy run with the same ``env_seed`` faces the same arm
trajectories (the dynamics do not depend on the actions).
"""

from __future__ import annotations

import bisect
import csv
import hashlib
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .belief import InformationState, initial_tau
from .exceptions import ConfigError, DomainError
from .markov import stationary_distribution
from .oracle import oracle_values
from .policy import ALA, ALAFP, ALAConfig, FixedArm, Myopic, RandomPolicy

RUN_HEADER = ("t", "arm", "observation", "reward", "phase")
REGRET_HEADER = ("T", "regret", "mode", "stderr", "n_replicates")


def derive_seed(*parts: int) -> int:
    """64-bit seed derived from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) & (2**63 - 1) for p in parts]).generate_state(1, np.uint64)[0])


def arm_paths(instance, length: int, env_seed: int) -> list:
    """Per arm, the state sequence at absolute steps ``1..length``.

    The first state is drawn from the stationary distribution.
    """
    out = []
    for k, arm in enumerate(instance.arms):
        P = np.asarray(arm.transition)
        n = P.shape[0]
        rng = np.random.Generator(np.random.Philox(key=derive_seed(env_seed, k)))
        u = rng.random(length).tolist()
        cum = [np.cumsum(row).tolist() for row in P]
        pi_cum = np.cumsum(stationary_distribution(P)).tolist()
        x = min(bisect.bisect_right(pi_cum, u[0]), n - 1)
        path = [x]
        for v in u[1:]:
            x = min(bisect.bisect_right(cum[x], v), n - 1)
            path.append(x)
        out.append(path)
    return out


@dataclass
class RunRecord:
    """One simulated run: ``K`` initialization steps followed by ``T`` decisions.

    Step arrays have length ``K + T``; the decision at time ``t`` is entry
    ``K + t - 1``.
    """

    K: int
    T: int
    arms: np.ndarray
    observations: np.ndarray
    rewards: np.ndarray
    phases: list
    env_seed: int
    agent_seed: int
    policy: str = ""
    belief_hashes: Optional[list] = None
    beliefs: Optional[np.ndarray] = field(default=None, repr=False)   # (T, sum |S|), NaN if not tracked
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    def decision_reward(self, T: Optional[int] = None) -> float:
        """Reward collected over decision times ``1..T`` (initialization excluded)."""
        T = self.T if T is None else T
        return float(self.rewards[self.K:self.K + T].sum())

    def info0(self) -> InformationState:
        return InformationState(tuple(int(x) for x in self.observations[:self.K]), initial_tau(self.K))

    def information_states(self):
        """Information state at every decision time ``1..T``."""
        s = list(self.observations[:self.K])
        tau = list(initial_tau(self.K))
        for t in range(self.T):
            yield InformationState(tuple(s), tuple(tau))
            u = int(self.arms[self.K + t])
            tau = [1 if k == u else x + 1 for k, x in enumerate(tau)]
            s[u] = int(self.observations[self.K + t])

    def rows(self):
        for i in range(self.K + self.T):
            yield (i - self.K + 1, int(self.arms[i]), int(self.observations[i]),
                   repr(float(self.rewards[i])), self.phases[i])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RUN_HEADER)
        w.writerows(self.rows())
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def simulate(instance, policy, T: int, env_seed: int, *, track_beliefs: bool = False,
             on_exploit: Optional[Callable] = None, agent_seed: Optional[int] = None) -> RunRecord:
    """Run ``policy`` for ``K`` initialization plays and ``T`` decisions."""
    if T < 1:
        raise DomainError("horizon must be >= 1")
    K = instance.K
    n = K + T
    paths = arm_paths(instance, n, env_seed)
    rewards_tab = [np.asarray(a.rewards, dtype=float).tolist() for a in instance.arms]
    policy.start(instance.sizes, instance.rewards)
    if on_exploit is not None:
        policy.on_exploit = on_exploit
    arms = np.empty(n, dtype=np.int64)
    obs = np.empty(n, dtype=np.int64)
    rew = np.empty(n)
    phases = []
    hashes = [] if track_beliefs else None
    beliefs = None
    if track_beliefs:
        beliefs = np.full((T, sum(instance.sizes)), np.nan)
    for k in range(K):
        y = paths[k][k]
        policy.observe_init(k, y)
        arms[k], obs[k], rew[k] = k, y, rewards_tab[k][y]
        phases.append("init")
        if track_beliefs:
            hashes.append("")
    for t in range(1, T + 1):
        i = K + t - 1
        u = policy.choose(t)
        if not 0 <= u < K:
            raise DomainError(f"policy chose arm {u} outside 0..{K - 1}")
        y = paths[u][i]
        phase = policy.phase
        if track_beliefs:
            if hasattr(policy, "estimated_belief"):
                b = policy.estimated_belief()
                beliefs[t - 1] = b
                hashes.append(hashlib.sha1(b.tobytes()).hexdigest()[:16])
            else:
                hashes.append("")
        policy.observe(t, u, y)
        arms[i], obs[i], rew[i] = u, y, rewards_tab[u][y]
        phases.append(phase)
    extra = {}
    if hasattr(policy, "choices"):
        extra["fp_choices"] = list(policy.choices)
    return RunRecord(K, T, arms, obs, rew, phases, int(env_seed),
                     int(getattr(policy, "seed", 0) if agent_seed is None else agent_seed),
                     getattr(policy, "name", type(policy).__name__), hashes, beliefs, extra)


def make_policy(name: str, instance, params: Optional[dict] = None, seed: int = 0):
    """Policy from a name: ``ala``, ``ala_fp``, ``fixed_arm:k``, ``random`` or ``myopic``.

    ``params`` may hold an :class:`ALAConfig` under ``"config"`` or its fields.
    """
    params = dict(params or {})
    if name in ("ala", "ala_fp"):
        cfg = params.pop("config", None)
        if cfg is None:
            cfg = ALAConfig(**params)
        elif params:
            cfg = cfg.replace(**params)
        cls = ALAFP if name == "ala_fp" else ALA
        return cls.from_config(cfg, seed=seed)
    if name.startswith("fixed_arm"):
        try:
            k = int(name.split(":", 1)[1])
        except (IndexError, ValueError):
            raise ConfigError(f"fixed-arm policy needs an arm index, got {name!r}") from None
        return FixedArm(k)
    if name == "random":
        return RandomPolicy(seed)
    if name == "myopic":
        return Myopic(instance.transitions)
    raise ConfigError(f"unknown algorithm {name!r}")


def replicate_seeds(seed: int, r: int) -> tuple:
    return derive_seed(seed, r, 0), derive_seed(seed, r, 1)


def _run_one(args):
    instance, name, params, T, seed, r, track = args
    env_seed, agent_seed = replicate_seeds(seed, r)
    pol = make_policy(name, instance, params, agent_seed)
    return simulate(instance, pol, T, env_seed, track_beliefs=track, agent_seed=agent_seed)


def simulate_many(instance, name: str, config, T: int, n_runs: int, seed: int = 0, *,
                  on_exploit: Optional[Callable] = None, track_beliefs: bool = False,
                  workers: int = 1) -> list:
    """Replicates ``r = 0..n_runs-1`` with seeds derived from ``(seed, r)``.

    ``config`` is an :class:`ALAConfig`, a parameter dict or None.
    """
    params = {"config": config} if isinstance(config, ALAConfig) else dict(config or {})
    jobs = [(instance, name, params, T, seed, r, track_beliefs) for r in range(n_runs)]
    if workers > 1 and on_exploit is None:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_one, jobs))
    out = []
    for job in jobs:
        if on_exploit is None:
            out.append(_run_one(job))
        else:
            _, _, _, _, _, r, _ = job
            env_seed, agent_seed = replicate_seeds(seed, r)
            pol = make_policy(name, instance, params, agent_seed)
            out.append(simulate(instance, pol, T, env_seed, track_beliefs=track_beliefs,
                                on_exploit=on_exploit, agent_seed=agent_seed))
    return out


# ------------------------------------------------------------------ regret


@dataclass
class RegretReport:
    mode: str
    horizons: list
    regret: np.ndarray
    stderr: np.ndarray
    n_replicates: int
    per_run: Optional[np.ndarray] = field(default=None, repr=False)   # (n_runs, len(horizons))

    def rows(self):
        for T, r, s in zip(self.horizons, self.regret, self.stderr):
            yield (int(T), repr(float(r)), self.mode, repr(float(s)), self.n_replicates)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REGRET_HEADER)
        w.writerows(self.rows())
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _summarize(mode, horizons, per_run):
    n = per_run.shape[0]
    mean = per_run.mean(axis=0)
    se = per_run.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(len(horizons))
    return RegretReport(mode, list(horizons), mean, se, n, per_run)


def regret_curve(runs, instance, horizons, mode: str = "exact", solution=None, P=None,
                 oracle_cache: Optional[dict] = None) -> RegretReport:
    """Mean regret over replicate runs at each horizon.

    ``exact``: optimal ``T``-step value from each run's initial information
    state minus the run's reward over ``1..T``. ``delta``: cumulative
    suboptimality gaps along the run, from a solution for the true model.
    """
    runs = list(runs)
    if not runs:
        raise DomainError("no runs")
    horizons = sorted(int(h) for h in horizons)
    if horizons[-1] > min(r.T for r in runs):
        raise DomainError("a probe horizon exceeds the run length")
    P = instance.transitions if P is None else P
    per_run = np.empty((len(runs), len(horizons)))
    if mode == "exact":
        cache = {} if oracle_cache is None else oracle_cache
        for i, run in enumerate(runs):
            info0 = run.info0()
            need = [h for h in horizons if (info0, h) not in cache]
            if need:
                vals = oracle_values(instance, P, info0, need)
                for h, v in vals.items():
                    cache[info0, h] = v
            cum = np.cumsum(run.rewards[run.K:])
            per_run[i] = [cache[info0, h] - cum[h - 1] for h in horizons]
    elif mode == "delta":
        if solution is None:
            raise ConfigError("delta-mode regret needs a solution for the true model")
        for i, run in enumerate(runs):
            gaps = np.empty(horizons[-1])
            for t, info in enumerate(run.information_states()):
                if t >= horizons[-1]:
                    break
                q = solution.q_values(info)
                gaps[t] = q.max() - q[int(run.arms[run.K + t])]
            cum = np.cumsum(gaps)
            per_run[i] = [cum[h - 1] for h in horizons]
    else:
        raise ConfigError(f"unknown regret mode {mode!r}")
    return _summarize(mode, horizons, per_run)


# ------------------------------------------------------------- diagnostics


@dataclass
class DiagnosticsReport:
    epsilon: float
    exploit_steps: int
    belief_error_events: int
    exploration_steps: int
    exploration_envelope: float

    @property
    def exploration_within_envelope(self) -> bool:
        return self.exploration_steps <= self.exploration_envelope


def exploration_envelope(instance, schedule, T: int, T_max: float) -> float:
    """``(sum_k |S^k|) f(T) (1 + T_max)``."""
    return float(sum(instance.sizes) * schedule(T) * (1.0 + T_max))


def diagnostics(run: RunRecord, instance, epsilon: float, schedule=None, certificate=None,
                P=None) -> DiagnosticsReport:
    """Belief-error events at exploitation steps and the exploration count.

    A belief-error event is an exploitation step where the joint L1 distance
    between the true belief and the estimated one exceeds ``epsilon``. Needs
    a run simulated with ``track_beliefs=True``.
    """
    P = instance.transitions if P is None else P
    exploit = explore = events = 0
    offsets = np.concatenate([[0], np.cumsum(instance.sizes)])
    for t, info in enumerate(run.information_states()):
        phase = run.phases[run.K + t]
        if phase == "explore":
            explore += 1
        if phase != "exploit":
            continue
        exploit += 1
        if run.beliefs is None or np.isnan(run.beliefs[t, 0]):
            continue
        est = run.beliefs[t]
        true_j, est_j = np.ones(1), np.ones(1)
        for k, (Pk, s, tau) in enumerate(zip(P, info.s, info.tau)):
            true_j = np.multiply.outer(true_j, np.linalg.matrix_power(Pk, tau)[s]).ravel()
            est_j = np.multiply.outer(est_j, est[offsets[k]:offsets[k + 1]]).ravel()
        if np.abs(true_j - est_j).sum() > epsilon:
            events += 1
    env = np.inf
    if schedule is not None and certificate is not None:
        env = exploration_envelope(instance, schedule, run.T, certificate.T_max)
    return DiagnosticsReport(epsilon, exploit, events, explore, env)
