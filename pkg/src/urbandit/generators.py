"""Named instance generators used by experiment configs and tests."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError
from .markov import ArmModel, BanditInstance


def _two_state_rows(rng, low, high):
    p = rng.uniform(low, high, size=2)
    return np.array([[p[0], 1 - p[0]], [1 - p[1], p[1]]])


def dense(K: int = 2, S=2, seed: int = 0, low: float = 0.2, high: float = 0.8,
          rewards: str = "uniform") -> BanditInstance:
    """Random instance with strictly positive transitions.

    Two-state arms draw both self-transition probabilities in ``[low, high]``,
    so every entry lies in that range. Larger arms draw entries uniformly in
    ``[low, high]`` and normalize rows. Rewards are uniform on ``[0, 1]``
    (``rewards="uniform"``) or the state index (``"index"``).
    """
    rng = np.random.default_rng(seed)
    sizes = [S] * K if np.isscalar(S) else list(S)
    if len(sizes) != K:
        raise ConfigError("len(S) must equal K")
    if not 0 < low <= high:
        raise ConfigError("need 0 < low <= high")
    arms = []
    for k, n in enumerate(sizes):
        if n == 2 and high < 1:
            P = _two_state_rows(rng, low, high)
        else:
            P = rng.uniform(low, high, size=(n, n))
            P /= P.sum(axis=1, keepdims=True)
        r = rng.uniform(0, 1, n) if rewards == "uniform" else np.arange(n, dtype=float)
        arms.append(ArmModel(tuple(range(n)), P, r, f"arm{k}"))
    return BanditInstance(tuple(arms))


def acceptance_instance() -> BanditInstance:
    """Fixed two-arm, two-state instance used by the regret-shape checks.

    Entries lie in ``[0.2, 0.8]``; reward equals the state index.
    """
    P1 = np.array([[0.7, 0.3], [0.4, 0.6]])
    P2 = np.array([[0.3, 0.7], [0.6, 0.4]])
    return BanditInstance((ArmModel((0, 1), P1, np.array([0.0, 1.0]), "arm0"),
                           ArmModel((0, 1), P2, np.array([0.0, 1.0]), "arm1")))


def dominance(S: int = 2) -> BanditInstance:
    """Arm 0 pays 1 in every state, arm 1 pays 0."""
    P = 0.4 * np.eye(S) + 0.6 / S
    return BanditInstance((ArmModel(tuple(range(S)), P, np.ones(S), "arm0"),
                           ArmModel(tuple(range(S)), P.copy(), np.zeros(S), "arm1")))


GENERATORS = {"dense": dense, "acceptance": acceptance_instance, "dominance": dominance}


def generate(name: str, **params) -> BanditInstance:
    if name not in GENERATORS:
        raise ConfigError(f"unknown generator {name!r}; known: {sorted(GENERATORS)}")
    try:
        return GENERATORS[name](**params)
    except TypeError as e:
        raise ConfigError(f"bad parameters for generator {name!r}: {e}") from None
