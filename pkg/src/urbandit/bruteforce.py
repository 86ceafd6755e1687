"""Reference optimum by expectimax over the full observation history tree.

Works on the joint state space with the Kronecker-product chain and full
joint beliefs; no information-state bookkeeping and no memoization, so it is
an independent check of :mod:`urbandit.oracle`. The cost grows as
``(K * S)^T``; intended for ``T <= 7`` on tiny instances.
"""

from __future__ import annotations

from functools import reduce

import numpy as np

from .belief import InformationState
from .exceptions import OracleTooLargeError


def joint_chain(P) -> np.ndarray:
    """Transition matrix of the product chain (arm 0 is the slowest index)."""
    return reduce(np.kron, [np.asarray(Pk, dtype=float) for Pk in P])


def _observation_masks(sizes):
    grids = np.indices(sizes).reshape(len(sizes), -1)
    return [[grids[u] == y for y in range(n)] for u, n in enumerate(sizes)]


def prior_joint(P, info: InformationState) -> np.ndarray:
    """Joint distribution one step before decision time."""
    rows = [np.linalg.matrix_power(np.asarray(Pk, dtype=float), t - 1)[s]
            for Pk, s, t in zip(P, info.s, info.tau)]
    return reduce(np.kron, rows)


def brute_force_value(P, rewards, info: InformationState, T: int, max_leaves: int = 10**7) -> float:
    """Optimal expected ``T``-step reward from ``info`` by exhaustive expectimax."""
    sizes = [np.asarray(Pk).shape[0] for Pk in P]
    branching = sum(sizes)
    if branching ** T > max_leaves:
        raise OracleTooLargeError(f"history tree has about {branching ** T} leaves")
    J = joint_chain(P)
    masks = _observation_masks(sizes)
    rewards = [np.asarray(r, dtype=float) for r in rewards]

    def value(phi, h):
        if h == 0:
            return 0.0
        nxt = phi @ J
        best = -np.inf
        for u, n in enumerate(sizes):
            total = 0.0
            for y in range(n):
                post = np.where(masks[u][y], nxt, 0.0)
                p = post.sum()
                if p <= 0.0:
                    continue
                total += p * (rewards[u][y] + value(post / p, h - 1))
            best = max(best, total)
        return best

    return float(value(prior_joint(P, info), T))
