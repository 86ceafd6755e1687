"""Exact finite-horizon optimum by backward induction over information states.

Arms whose belief has converged to the stationary distribution (to within
``sat_tol`` in L1, for every starting state) are merged into one
saturated state per arm, which keeps the reachable set finite for long
horizons. Below the saturation time nothing is merged, so for short
horizons the recursion is the plain memoized tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .belief import InformationState
from .exceptions import DomainError, OracleTooLargeError
from .markov import stationary_distribution

SATURATED = -1


def saturation_time(P, sat_tol: float = 1e-13, cap: int = 100_000) -> int:
    """First ``tau`` with ``max_s ||e_s P^tau - pi||_1 <= sat_tol``."""
    P = np.asarray(P, dtype=float)
    pi = stationary_distribution(P)
    Pt = P.copy()
    for tau in range(1, cap + 1):
        if np.abs(Pt - pi).sum(axis=1).max() <= sat_tol:
            return tau
        Pt = Pt @ P
    return cap


@dataclass
class InfoStateSpace:
    """Finite set of (canonical) information states closed under play.

    Each key is a tuple with one ``(s, tau)`` pair per arm; a saturated arm
    is stored as ``(SATURATED, tau_sat)``.
    """

    keys: list
    index: dict
    succ: np.ndarray        # (n, K, S_max) successor index, -1 where y is not a state
    cur_row: np.ndarray     # (n, K) row into the per-arm marginal table
    tau_sat: tuple

    @property
    def n(self) -> int:
        return len(self.keys)


def _canon(key, tau_sat):
    return tuple((SATURATED, ts) if t >= ts else (s, t) for (s, t), ts in zip(key, tau_sat))


def build_state_space(sizes, roots: Iterable, tau_sat, max_states: int = 2_000_000) -> InfoStateSpace:
    K = len(sizes)
    S = max(sizes)
    start = [_canon(tuple(zip(r.s, r.tau)), tau_sat) for r in roots]
    index = {}
    keys = []
    for k in start:
        if k not in index:
            index[k] = len(keys)
            keys.append(k)
    succ_rows = []
    i = 0
    while i < len(keys):
        key = keys[i]
        row = np.full((K, S), -1, dtype=np.int64)
        for u in range(K):
            for y in range(sizes[u]):
                nxt = tuple((y, 1) if k == u else ((SATURATED, ts) if s == SATURATED else (s, t + 1))
                            for k, ((s, t), ts) in enumerate(zip(key, tau_sat)))
                nxt = _canon(nxt, tau_sat)
                j = index.get(nxt)
                if j is None:
                    j = index[nxt] = len(keys)
                    keys.append(nxt)
                    if len(keys) > max_states:
                        raise OracleTooLargeError(f"more than {max_states} reachable information states")
                row[u, y] = j
        succ_rows.append(row)
        i += 1
    succ = np.stack(succ_rows)
    # marginal table row: s * tau_sat + tau for tau < tau_sat, last row is pi
    cur_row = np.array([[(sizes[k] * ts if s == SATURATED else s * ts + t)
                         for k, ((s, t), ts) in enumerate(zip(key, tau_sat))] for key in keys],
                       dtype=np.int64)
    return InfoStateSpace(keys, index, succ, cur_row, tuple(tau_sat))


def marginal_tables(P, tau_sat) -> list:
    """Per arm: rows ``P^tau[s]`` at index ``s*tau_sat + tau`` and ``pi`` last."""
    out = []
    for Pk, ts in zip(P, tau_sat):
        Pk = np.asarray(Pk, dtype=float)
        n = Pk.shape[0]
        tab = np.zeros((n * ts + 1, n))
        Pt = np.eye(n)
        for t in range(ts):
            tab[np.arange(n) * ts + t] = Pt
            Pt = Pt @ Pk
        tab[-1] = stationary_distribution(Pk)
        out.append(tab)
    return out


def observation_model(space: InfoStateSpace, P, rewards):
    """Observation probabilities ``(n, K, S)`` and expected rewards ``(n, K)``."""
    K = len(P)
    S = space.succ.shape[2]
    tabs = marginal_tables(P, space.tau_sat)
    prob = np.zeros((space.n, K, S))
    for k in range(K):
        nk = tabs[k].shape[1]
        prob[:, k, :nk] = tabs[k][space.cur_row[:, k]]
    rew = np.zeros((space.n, K))
    for k in range(K):
        rk = np.asarray(rewards[k], dtype=float)
        rew[:, k] = prob[:, k, : rk.size] @ rk
    return prob, rew


@dataclass
class OracleResult:
    horizon: int
    value: float
    values: np.ndarray           # value of every root, shape (n_roots,)
    node_count: int
    space: InfoStateSpace = field(repr=False)
    policy_table: Optional[np.ndarray] = field(default=None, repr=False)   # (T+1, n)

    def policy(self, info: InformationState, remaining: int) -> int:
        """Optimal arm at ``info`` with ``remaining`` steps to go (ties -> lowest arm)."""
        if self.policy_table is None:
            raise DomainError("policy table was not stored (state space too large)")
        key = _canon(tuple(zip(info.s, info.tau)), self.space.tau_sat)
        j = self.space.index.get(key)
        if j is None:
            raise DomainError(f"{info} is not reachable from the oracle's root")
        if not 1 <= remaining <= self.horizon:
            raise DomainError(f"remaining horizon {remaining} outside 1..{self.horizon}")
        return int(self.policy_table[remaining, j])


def _saturation(P, sat_tol, roots, T):
    # no merging is needed past the largest tau the recursion can reach
    reach = max(max(r.tau) for r in roots) + T + 1
    return tuple(min(saturation_time(Pk, sat_tol, cap=reach), reach) for Pk in P)


def backward_induction(P, rewards, roots, T: int, *, sat_tol: float = 1e-13,
                       store_policy: bool = True, max_nodes: int = 2 * 10**9,
                       values_by_horizon: bool = False, tau_sat=None):
    """Optimal ``h``-step values for every reachable state, ``h = 0..T``.

    ``tau_sat`` overrides the per-arm saturation times; a root whose
    ``tau[k] >= tau_sat[k]`` then starts arm ``k`` at its stationary law.

    Returns ``(space, V, policy)`` where ``V`` has shape ``(T+1, n)`` if
    ``values_by_horizon`` else ``(n,)`` for ``h = T``.
    """
    roots = list(roots)
    sizes = [np.asarray(Pk).shape[0] for Pk in P]
    for r in roots:
        r.check(sizes)
    if tau_sat is None:
        tau_sat = _saturation(P, sat_tol, roots, T)
    space = build_state_space(sizes, roots, tau_sat)
    if space.n * max(T, 1) > max_nodes:
        raise OracleTooLargeError(f"{space.n} states x {T} steps exceeds cap {max_nodes}")
    prob, rew = observation_model(space, P, rewards)
    succ = np.where(space.succ < 0, 0, space.succ)
    v = np.zeros(space.n)
    hist = [v] if values_by_horizon else None
    pol = np.zeros((T + 1, space.n), dtype=np.int8) if store_policy else None
    for h in range(1, T + 1):
        q = rew + np.einsum("nky,nky->nk", prob, v[succ])
        best = np.argmax(q, axis=1)
        v = q[np.arange(space.n), best]
        if store_policy:
            pol[h] = best
        if values_by_horizon:
            hist.append(v)
    V = np.stack(hist) if values_by_horizon else v
    return space, V, pol


def finite_horizon_oracle(instance, P, info0: InformationState, T: int, *,
                          sat_tol: float = 1e-13, max_nodes: int = 2 * 10**9,
                          store_policy_cap: int = 50_000_000) -> OracleResult:
    """Optimal expected ``T``-step reward from ``info0`` when ``P`` is known."""
    if T < 0:
        raise DomainError("horizon must be nonnegative")
    P = tuple(P) if P is not None else instance.transitions
    sizes = [np.asarray(Pk).shape[0] for Pk in P]
    tau_sat = _saturation(P, sat_tol, [info0], T)
    est = 1
    for n, ts in zip(sizes, tau_sat):
        est *= n * ts + 1
    store = est * (T + 1) <= store_policy_cap
    space, v, pol = backward_induction(P, instance.rewards, [info0], T, sat_tol=sat_tol,
                                       store_policy=store, max_nodes=max_nodes)
    if pol is not None and pol.nbytes > store_policy_cap:
        pol = None
    return OracleResult(horizon=T, value=float(v[0]), values=v[:1].copy(),
                        node_count=int(space.n * T), space=space, policy_table=pol)


def oracle_values(instance, P, info0: InformationState, horizons, *, sat_tol: float = 1e-13):
    """Optimal values from ``info0`` at several horizons from one backward pass."""
    horizons = sorted(set(int(h) for h in horizons))
    P = tuple(P) if P is not None else instance.transitions
    space, V, _ = backward_induction(P, instance.rewards, [info0], horizons[-1],
                                     sat_tol=sat_tol, store_policy=False, values_by_horizon=True)
    return {h: float(V[h, 0]) for h in horizons}
