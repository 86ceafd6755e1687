"""Finite ergodic Markov chain primitives and the bandit instance model.

Everything here is immutable after construction: arrays handed out by
these types are flagged read-only so instances can be shared freely
between parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .exceptions import (
    ConvergenceError,
    DomainError,
    ErgodicityError,
    NegativeEntryError,
    NumericalError,
    RowSumError,
    ValidationError,
)

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def check_transition_matrix(P, *, name: str = "P") -> np.ndarray:
    """Validate a row-stochastic matrix and return a read-only float copy.

    Rows are renormalised after validation so that every row sums to one
    to machine precision.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise ValidationError(f"{name} must be a non-empty square matrix, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.any(P < 0):
        i, j = np.argwhere(P < 0)[0]
        raise NegativeEntryError(f"{name}[{i},{j}] = {P[i, j]} is negative")
    sums = P.sum(axis=1)
    bad = np.abs(sums - 1.0) > 1e-9
    if np.any(bad):
        i = int(np.argmax(bad))
        raise RowSumError(f"row {i} of {name} sums to {sums[i]!r}, not 1")
    return _frozen(P / sums[:, None])


def is_strictly_positive(P) -> bool:
    return bool(np.all(np.asarray(P) > 0))


def _period(adj: np.ndarray) -> int:
    # BFS levels from state 0; the period is the gcd of level[u] + 1 - level[v]
    # over all edges u -> v of an irreducible chain.
    n = adj.shape[0]
    level = np.full(n, -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(adj[u]):
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(int(v))
        frontier = nxt
    us, vs = np.nonzero(adj)
    return reduce(math.gcd, (int(d) for d in np.abs(level[us] + 1 - level[vs])), 0)


def check_ergodic(P) -> None:
    """Raise :class:`ErgodicityError` unless ``P`` is irreducible and aperiodic."""
    adj = np.asarray(P) > 0
    n_comp, _ = connected_components(adj, directed=True, connection="strong")
    if n_comp != 1:
        raise ErgodicityError(f"chain is reducible ({n_comp} communicating classes)")
    d = _period(adj)
    if d != 1:
        raise ErgodicityError(f"chain is periodic with period {d}")


def stationary_distribution(P) -> np.ndarray:
    """Unique stationary distribution of an ergodic chain.

    Solved directly from ``pi (P - I) = 0, sum(pi) = 1``; falls back to
    power iteration if the direct residual is not small enough.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        pi = np.full(n, 1.0 / n)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    it = 0
    while np.abs(pi @ P - pi).sum() > STATIONARY_TOL:
        pi = pi @ P
        pi /= pi.sum()
        it += 1
        if it > 100_000:
            raise ConvergenceError("stationary distribution did not converge",
                                   last_span=float(np.abs(pi @ P - pi).sum()))
    return pi


def expected_hitting_times(P) -> np.ndarray:
    """Matrix ``H`` with ``H[i, j]`` the expected first-passage time from i to j.

    The diagonal holds expected return times ``1 / pi_i``.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    H = np.zeros((n, n))
    for j in range(n):
        keep = np.array([i for i in range(n) if i != j], dtype=int)
        if keep.size:
            A = np.eye(keep.size) - P[np.ix_(keep, keep)]
            try:
                m = np.linalg.solve(A, np.ones(keep.size))
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"first-passage system to state {j} is singular") from exc
            H[keep, j] = m
    pi = stationary_distribution(P)
    H[np.arange(n), np.arange(n)] = 1.0 / pi
    return H


def tv_decay(P, pi=None, horizon: int = 64) -> np.ndarray:
    """``d(t) = max_x ||e_x P^t - pi||_1`` for ``t = 0..horizon``."""
    P = np.asarray(P, dtype=float)
    if pi is None:
        pi = stationary_distribution(P)
    Pt = np.eye(P.shape[0])
    d = np.empty(horizon + 1)
    for t in range(horizon + 1):
        d[t] = np.abs(Pt - pi).sum(axis=1).max()
        Pt = Pt @ P
    return d


def c1_constant(C: float, rho: float, t: float = math.inf) -> float:
    """Perturbation constant ``t_hat + C (rho^t_hat - rho^t) / (1 - rho)``.

    ``t_hat = ceil(log_rho(1 / C))``, clipped at zero when ``C <= 1``.
    """
    if C <= 0:
        return 0.0
    t_hat = max(0, math.ceil(math.log(1.0 / C) / math.log(rho))) if C > 1 else 0
    rho_t = 0.0 if math.isinf(t) else rho ** t
    return t_hat + C * (rho ** t_hat - rho_t) / (1.0 - rho)


# sum_{t>=1} 1/t^2, truncated at 10^6 with an Euler-Maclaurin tail.
def _beta(n: int = 10**6) -> float:
    head = math.fsum(1.0 / np.arange(n, 0, -1, dtype=float) ** 2)
    tail = 1.0 / n - 1.0 / (2 * n**2) + 1.0 / (6 * n**3)
    return head + tail


BETA = _beta()


@dataclass(frozen=True, eq=False)
class ArmModel:
    """One arm: state labels, transition matrix, state rewards."""

    states: tuple
    transition: np.ndarray
    rewards: np.ndarray
    name: str = "arm"

    def __post_init__(self):
        P = check_transition_matrix(self.transition, name=f"{self.name}.transition")
        states = tuple(self.states)
        if len(states) != P.shape[0]:
            raise DomainError(f"{self.name}: {len(states)} labels for a {P.shape[0]}-state chain")
        if len(set(states)) != len(states):
            raise DomainError(f"{self.name}: duplicate state labels")
        r = np.asarray(self.rewards, dtype=float)
        if r.shape != (len(states),) or not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValidationError(f"{self.name}: rewards must be finite, nonnegative, one per state")
        check_ergodic(P)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "rewards", _frozen(r))

    @classmethod
    def from_labels(cls, labels: Sequence[float], transition, name: str = "arm") -> "ArmModel":
        """Build an arm whose state rewards are the numeric state labels."""
        labels = tuple(float(x) for x in labels)
        return cls(states=labels, transition=transition, rewards=labels, name=name)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def strictly_positive(self) -> bool:
        return is_strictly_positive(self.transition)

    def index_of(self, label) -> int:
        try:
            return self.states.index(label)
        except ValueError:
            raise DomainError(f"state {label!r} is not a state of {self.name}") from None


@dataclass(frozen=True)
class InstanceConstants:
    beta: float
    pi_min: float
    r_max: float
    S_max: int


@dataclass(frozen=True, eq=False)
class BanditInstance:
    arms: tuple
    constants: InstanceConstants = field(init=False)

    def __post_init__(self):
        arms = tuple(self.arms)
        if not arms:
            raise ValidationError("an instance needs at least one arm")
        object.__setattr__(self, "arms", arms)
        pis = [stationary_distribution(a.transition) for a in arms]
        object.__setattr__(self, "constants", InstanceConstants(
            beta=BETA,
            pi_min=float(min(p.min() for p in pis)),
            r_max=float(max(a.rewards.max() for a in arms)),
            S_max=max(a.n_states for a in arms),
        ))

    @property
    def K(self) -> int:
        return len(self.arms)

    @property
    def sizes(self) -> tuple:
        return tuple(a.n_states for a in self.arms)

    @property
    def transitions(self) -> tuple:
        return tuple(a.transition for a in self.arms)

    @property
    def rewards(self) -> tuple:
        return tuple(a.rewards for a in self.arms)

    @property
    def strictly_positive(self) -> tuple:
        """Per-arm flag: all transition entries positive."""
        return tuple(a.strictly_positive for a in self.arms)

    def qualified_state(self, k: int, i: int) -> str:
        """Namespaced label, so that state sets of different arms are disjoint."""
        return f"{self.arms[k].name}:{self.arms[k].states[i]}"

    def with_transitions(self, transitions) -> "BanditInstance":
        return BanditInstance(tuple(
            ArmModel(a.states, P, a.rewards, a.name) for a, P in zip(self.arms, transitions)
        ))

    def to_dict(self) -> dict:
        return {"arms": [
            {"name": a.name, "states": list(a.states),
             "transition": a.transition.tolist(), "rewards": a.rewards.tolist()}
            for a in self.arms
        ]}


def validate_instance(data: Mapping) -> BanditInstance:
    """Build a :class:`BanditInstance` from a raw description.

    ``data`` is ``{"arms": [{"transition": [[...]], "rewards": [...],
    "states": [...], "name": ...}, ...]}``. When ``rewards`` is omitted the
    states must be numeric and each state's reward is its label.
    """
    raw_arms = data.get("arms") if isinstance(data, Mapping) else None
    if not raw_arms:
        raise ValidationError("instance must list at least one arm under 'arms'")
    arms = []
    for k, raw in enumerate(raw_arms):
        name = str(raw.get("name", f"arm{k}"))
        P = check_transition_matrix(raw["transition"], name=f"{name}.transition")
        n = P.shape[0]
        if "rewards" in raw:
            states = tuple(raw.get("states", range(n)))
            arms.append(ArmModel(states, P, raw["rewards"], name))
        else:
            labels = raw.get("states", raw.get("labels"))
            if labels is None:
                raise ValidationError(f"{name}: need 'rewards' or numeric 'states'")
            arms.append(ArmModel.from_labels(labels, P, name))
    names = [a.name for a in arms]
    if len(set(names)) != len(names):
        raise ValidationError("arm names must be unique")
    return BanditInstance(tuple(arms))


@dataclass(frozen=True, eq=False)
class ArmCertificate:
    stationary: np.ndarray
    C: float
    rho: float
    t_hat: int
    C1_infinity: float
    hitting: np.ndarray
    decay: np.ndarray


@dataclass(frozen=True)
class ErgodicityCertificate:
    arms: tuple
    T_max: float

    @property
    def C1(self) -> float:
        """``max_k C1(P^k, inf)``."""
        return max(a.C1_infinity for a in self.arms)


RHO_FLOOR = 1e-3


def _envelope(d: np.ndarray) -> tuple:
    """Tightest geometric envelope ``C rho^t >= d(t)`` for a decay profile."""
    live = d[:-1] > 1e-14
    ratios = d[1:][live] / d[:-1][live]
    rho = float(ratios.max()) if ratios.size else RHO_FLOOR
    if rho >= 1.0:
        # transient growth (complex spectrum): use the best uniform rate instead
        t = np.arange(1, d.size)
        rho = float(np.max((d[1:] / d[0]) ** (1.0 / t)))
    rho = min(max(rho, RHO_FLOOR), 1.0 - 1e-12)
    C = float(np.max(d / rho ** np.arange(d.size)))
    return C, rho


def ergodicity_certificate(instance: BanditInstance, window: int = 64,
                           t_check: int = 64) -> ErgodicityCertificate:
    """Measured uniform-ergodicity constants ``(C, rho)`` per arm.

    ``rho`` is the worst one-step contraction of the total-variation decay
    over the probe window and ``C`` the smallest constant making
    ``C rho^t`` dominate it; the inequality is then re-checked up to
    ``t_check``.
    """
    certs = []
    t_max = 0.0
    for arm in instance.arms:
        P = arm.transition
        pi = stationary_distribution(P)
        d = tv_decay(P, pi, max(window, t_check))
        C, rho = _envelope(d[: window + 1])
        if rho >= 1.0:
            raise ErgodicityError(f"{arm.name}: fitted contraction rate {rho} >= 1")
        envelope = C * rho ** np.arange(t_check + 1)
        if np.any(d[: t_check + 1] > envelope + 1e-9):
            C = float(np.max(d[: t_check + 1] / rho ** np.arange(t_check + 1)))
        t_hat = max(0, math.ceil(math.log(1.0 / C) / math.log(rho))) if C > 1 else 0
        H = expected_hitting_times(P)
        t_max = max(t_max, float(H.max()))
        certs.append(ArmCertificate(
            stationary=_frozen(pi), C=C, rho=rho, t_hat=t_hat,
            C1_infinity=c1_constant(C, rho), hitting=_frozen(H), decay=_frozen(d),
        ))
    return ErgodicityCertificate(arms=tuple(certs), T_max=t_max + 1.0)


def product_difference_bound(rho, rho_prime) -> tuple:
    """``(|prod rho - prod rho'|, sum |rho - rho'|)``; the first never exceeds the second."""
    a = np.asarray(rho, dtype=float)
    b = np.asarray(rho_prime, dtype=float)
    if a.shape != b.shape:
        raise DomainError("rho and rho_prime must have the same length")
    if np.any((a < 0) | (a > 1) | (b < 0) | (b > 1)):
        raise DomainError("entries must lie in [0, 1]")
    return float(abs(np.prod(a) - np.prod(b))), float(np.abs(a - b).sum())
