"""Count tables, transition estimates and concentration diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DomainError


@dataclass
class CountTables:
    """Play counts ``N^k``, transition counts ``N^k_ij`` and visit counts ``C^k_i``.

    A transition ``i -> j`` of arm ``k`` is only counted when ``k`` was played
    at two consecutive steps, observing ``i`` then ``j``.
    """

    plays: np.ndarray
    transitions: list
    visits: list

    @classmethod
    def zeros(cls, sizes) -> "CountTables":
        sizes = [int(n) for n in sizes]
        return cls(np.zeros(len(sizes), dtype=np.int64),
                   [np.zeros((n, n), dtype=np.int64) for n in sizes],
                   [np.zeros(n, dtype=np.int64) for n in sizes])

    @property
    def sizes(self) -> tuple:
        return tuple(v.size for v in self.visits)

    def copy(self) -> "CountTables":
        return CountTables(self.plays.copy(), [m.copy() for m in self.transitions],
                           [v.copy() for v in self.visits])

    def consistent(self) -> bool:
        return all(np.array_equal(m.sum(axis=1), v) for m, v in zip(self.transitions, self.visits))


def record_step(tables: CountTables, prev_arm: Optional[int], arm: int,
                prev_obs: Optional[int], obs: int) -> bool:
    """Update ``tables`` in place for one play; returns True if a transition was counted."""
    K = len(tables.visits)
    if not 0 <= arm < K:
        raise DomainError(f"arm {arm} out of range")
    if not 0 <= obs < tables.visits[arm].size:
        raise DomainError(f"observation {obs} is not a state of arm {arm}")
    tables.plays[arm] += 1
    if prev_arm is not None and prev_arm == arm:
        if prev_obs is None or not 0 <= prev_obs < tables.visits[arm].size:
            raise DomainError(f"previous observation {prev_obs} is not a state of arm {arm}")
        tables.transitions[arm][prev_obs, obs] += 1
        tables.visits[arm][prev_obs] += 1
        return True
    return False


@dataclass
class EstimatedModel:
    raw: list = field(repr=False)
    normalized: list


def estimate_arm(N: np.ndarray, C: np.ndarray) -> tuple:
    """Raw and normalized estimate for one arm from its count tables."""
    n = C.size
    num = (N == 0).astype(float) + N
    den = n * (C == 0) + C
    raw = num / den[:, None]
    return raw, raw / raw.sum(axis=1, keepdims=True)


def estimate(tables: CountTables) -> EstimatedModel:
    """``pbar_ij = (1[N_ij = 0] + N_ij) / (|S| 1[C_i = 0] + C_i)``, then row-normalized."""
    raw, norm = [], []
    for N, C in zip(tables.transitions, tables.visits):
        r, p = estimate_arm(N, C)
        raw.append(r)
        norm.append(p)
    return EstimatedModel(raw, norm)


def exploration_set(tables: CountTables, t: int, f_t: float) -> list:
    """Pairs ``(k, i)`` with ``C^k_i < f(t)``, in lexicographic order."""
    if t < 1:
        raise DomainError("t must be >= 1")
    return [(k, int(i)) for k, C in enumerate(tables.visits) for i in np.flatnonzero(C < f_t)]


# ------------------------------------------------------------- concentration


@dataclass
class ConcentrationReport:
    """Per-decade exceedance frequencies against the analytic envelopes.

    A frequency estimates ``P(|p_ij - P_ij| > epsilon, exploit at t)`` averaged
    over the ``t`` in the bucket; the reported value is the maximum over all
    entries ``(k, i, j)``. Envelopes are the bucket means of ``2/t^2`` (raw
    estimate) and ``(2K+2)/t^2`` (normalized estimate).
    """

    epsilon: float
    L: float
    horizon: int
    n_runs: int
    K: int
    buckets: list
    exploit_steps: np.ndarray
    raw_exceed: np.ndarray
    norm_exceed: np.ndarray
    raw_envelope: np.ndarray
    norm_envelope: np.ndarray

    def fraction_below(self) -> float:
        """Share of (bucket, estimate kind) pairs at or below the envelope."""
        ok = np.concatenate([self.raw_exceed <= self.raw_envelope,
                             self.norm_exceed <= self.norm_envelope])
        return float(ok.mean()) if ok.size else 1.0

    def rows(self) -> list:
        return [(lo, hi, int(n), float(a), float(ea), float(b), float(eb))
                for (lo, hi), n, a, ea, b, eb in zip(self.buckets, self.exploit_steps, self.raw_exceed,
                                                     self.raw_envelope, self.norm_exceed,
                                                     self.norm_envelope)]


def decade_buckets(horizon: int) -> list:
    out, lo = [], 1
    while lo <= horizon:
        out.append((lo, min(lo * 10 - 1, horizon)))
        lo *= 10
    return out


def concentration_report(instance, L: float, epsilon: float, horizon: int, n_runs: int,
                         seed: int = 0, *, tau0: int = 4, index_budget: int = 8,
                         resolve_every: int = 1) -> ConcentrationReport:
    """Run ALA ``n_runs`` times and record estimate errors at exploitation steps."""
    from .policy import ALAConfig, ExplorationSchedule
    from .simulation import simulate_many

    cfg = ALAConfig(schedule=ExplorationSchedule.fixed(L), tau0=tau0, index_budget=index_budget,
                    resolve_every=resolve_every)
    P = [np.asarray(p) for p in instance.transitions]
    buckets = decade_buckets(horizon)
    nb = len(buckets)
    n_entries = sum(p.size for p in P)
    steps = np.zeros(nb)
    raw_hits = np.zeros((nb, n_entries))
    norm_hits = np.zeros((nb, n_entries))

    def on_exploit(t, agent):
        b = min(int(math.log10(t)), nb - 1)
        raw = np.concatenate([np.abs(r - p).ravel() for r, p in zip(agent.model.raw, P)])
        norm = np.concatenate([np.abs(q - p).ravel() for q, p in zip(agent.model.normalized, P)])
        steps[b] += 1
        raw_hits[b] += raw > epsilon
        norm_hits[b] += norm > epsilon

    simulate_many(instance, "ala", cfg, horizon, n_runs, seed, on_exploit=on_exploit)
    K = instance.K
    trials = np.array([n_runs * (hi - lo + 1) for lo, hi in buckets], dtype=float)
    env = np.array([sum(1.0 / t ** 2 for t in range(lo, hi + 1)) / (hi - lo + 1)
                    for lo, hi in buckets])
    return ConcentrationReport(epsilon, L, horizon, n_runs, K, buckets, steps,
                               raw_hits.max(axis=1) / trials, norm_hits.max(axis=1) / trials,
                               2.0 * env, (2 * K + 2) * env)
