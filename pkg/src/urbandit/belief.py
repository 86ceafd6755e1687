"""Information states ``(s, tau)`` and their factorized beliefs.

Timing convention used throughout the package: at decision time ``t`` arm
``k`` was last observed ``tau[k]`` steps ago, in state ``s[k]``. Two
beliefs are attached to an information state:

* :func:`belief_of` -- the distribution of the arms *now*, row ``s[k]`` of
  ``P_k ** tau[k]``. Expected rewards are taken against it.
* :func:`observation_belief` -- the same distribution one step earlier
  (row ``s[k]`` of ``P_k ** (tau[k] - 1)``). The observation kernel
  :func:`observation_probability` and the update :func:`belief_update` act
  on this one, so that playing ``u`` and seeing ``y`` maps
  ``observation_belief(info)`` to ``observation_belief(advance(info, u, y))``.

Arm states are referred to by index; :class:`InformationState.from_labels`
converts from labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import DomainError, ImpossibleObservationError
from .markov import stationary_distribution


@dataclass(frozen=True)
class InformationState:
    s: tuple
    tau: tuple

    def __post_init__(self):
        s = tuple(int(x) for x in self.s)
        tau = tuple(int(x) for x in self.tau)
        if len(s) != len(tau) or not s:
            raise DomainError("s and tau must be non-empty and of equal length")
        if min(tau) < 1:
            raise DomainError(f"tau entries must be >= 1, got {tau}")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "tau", tau)

    @property
    def K(self) -> int:
        return len(self.s)

    @classmethod
    def from_labels(cls, instance, labels: Sequence, tau: Sequence[int]) -> "InformationState":
        return cls(tuple(a.index_of(x) for a, x in zip(instance.arms, labels)), tuple(tau))

    def check(self, sizes: Sequence[int]) -> "InformationState":
        if len(sizes) != self.K:
            raise DomainError(f"information state has {self.K} arms, instance has {len(sizes)}")
        for k, (x, n) in enumerate(zip(self.s, sizes)):
            if not 0 <= x < n:
                raise DomainError(f"state index {x} out of range for arm {k} ({n} states)")
        return self


def initial_tau(K: int) -> tuple:
    """``tau`` after playing arm ``k`` at step ``k`` for ``k = 1..K``."""
    return tuple(range(K, 0, -1))


def advance_information_state(info: InformationState, u: int, y: int) -> InformationState:
    """Play arm ``u`` and observe state ``y``: ``s[u] = y``, ``tau[u] = 1``, others age by one."""
    if not 0 <= u < info.K:
        raise DomainError(f"arm {u} out of range")
    if y < 0:
        raise DomainError(f"state index {y} is negative")
    s = list(info.s)
    s[u] = y
    tau = tuple(1 if k == u else t + 1 for k, t in enumerate(info.tau))
    return InformationState(tuple(s), tau)


class Belief:
    """Product belief: one probability vector per arm.

    The joint distribution over ``S^1 x ... x S^K`` is the outer product of
    the marginals and is only built on request (:meth:`joint`).
    """

    __slots__ = ("marginals",)

    def __init__(self, marginals):
        ms = []
        for m in marginals:
            m = np.array(m, dtype=float)
            m.setflags(write=False)
            ms.append(m)
        self.marginals = tuple(ms)

    def __repr__(self):
        inner = ", ".join(np.array2string(m, precision=4) for m in self.marginals)
        return f"Belief({inner})"

    @property
    def K(self) -> int:
        return len(self.marginals)

    @property
    def shape(self) -> tuple:
        return tuple(m.size for m in self.marginals)

    def joint(self, max_size: int = 4096) -> np.ndarray:
        size = int(np.prod(self.shape))
        if size > max_size:
            raise DomainError(f"joint belief has {size} entries, cap is {max_size}")
        out = self.marginals[0]
        for m in self.marginals[1:]:
            out = np.multiply.outer(out, m)
        return np.asarray(out).reshape(-1)

    def flat(self) -> np.ndarray:
        """Marginals concatenated into one vector."""
        return np.concatenate(self.marginals)


def _check_arm(u: int, P) -> None:
    if not 0 <= u < len(P):
        raise DomainError(f"arm {u} out of range for {len(P)} arms")


def _check_state(y: int, n: int, u: int) -> None:
    if not 0 <= y < n:
        raise DomainError(f"state index {y} is not a state of arm {u}")


def belief_of(info: InformationState, P) -> Belief:
    """Distribution of every arm at decision time: row ``s[k]`` of ``P[k] ** tau[k]``."""
    info.check([p.shape[0] for p in P])
    return Belief(np.linalg.matrix_power(np.asarray(Pk), t)[x]
                  for Pk, x, t in zip(P, info.s, info.tau))


def observation_belief(info: InformationState, P) -> Belief:
    """Belief one step before decision time (row ``s[k]`` of ``P[k] ** (tau[k]-1)``)."""
    info.check([p.shape[0] for p in P])
    return Belief(np.linalg.matrix_power(np.asarray(Pk), t - 1)[x]
                  for Pk, x, t in zip(P, info.s, info.tau))


def stationary_belief(P) -> Belief:
    return Belief(stationary_distribution(Pk) for Pk in P)


def advance_belief(belief: Belief, P) -> Belief:
    """Propagate every marginal one step."""
    return Belief(m @ Pk for m, Pk in zip(belief.marginals, P))


def observation_probability(belief: Belief, y: int, u: int, P) -> float:
    """Probability that the next state of arm ``u`` is ``y``: ``(b_u P_u)[y]``."""
    _check_arm(u, P)
    _check_state(y, P[u].shape[0], u)
    return float(belief.marginals[u] @ np.asarray(P[u])[:, y])


def belief_update(belief: Belief, y: int, u: int, P) -> Belief:
    """Posterior after playing ``u`` and observing ``y``.

    Arm ``u`` collapses onto ``y``; every other arm advances one step.
    """
    v = observation_probability(belief, y, u, P)
    if v <= 0.0:
        raise ImpossibleObservationError(f"observing state {y} on arm {u} has probability 0")
    ms = []
    for k, (m, Pk) in enumerate(zip(belief.marginals, P)):
        if k == u:
            e = np.zeros(m.size)
            e[y] = 1.0
            ms.append(e)
        else:
            ms.append(m @ Pk)
    return Belief(ms)


def belief_distance(b1: Belief, b2: Belief, max_joint: int = 4096) -> float:
    """L1 distance between the joint distributions of two product beliefs."""
    if b1.shape != b2.shape:
        raise DomainError(f"belief shapes differ: {b1.shape} vs {b2.shape}")
    return float(np.abs(b1.joint(max_joint) - b2.joint(max_joint)).sum())


def marginal_distance(b1: Belief, b2: Belief) -> float:
    """Sum over arms of marginal L1 distances; an upper bound on :func:`belief_distance`."""
    if b1.shape != b2.shape:
        raise DomainError(f"belief shapes differ: {b1.shape} vs {b2.shape}")
    return float(sum(np.abs(a - b).sum() for a, b in zip(b1.marginals, b2.marginals)))


def expected_reward(belief: Belief, u: int, rewards) -> float:
    """Expected reward of arm ``u`` under ``belief``."""
    return float(belief.marginals[u] @ np.asarray(rewards[u]))


def power_stack(P, n: int) -> np.ndarray:
    """``[P^0, P^1, ..., P^n]`` stacked along the first axis."""
    P = np.asarray(P, dtype=float)
    out = np.empty((n + 1,) + P.shape)
    out[0] = np.eye(P.shape[0])
    for t in range(1, n + 1):
        out[t] = out[t - 1] @ P
    return out
