"""Average-reward optimality equation on a truncated information-state grid.

A grid point assigns every arm either an exact pair ``(s, tau)`` with
``1 <= tau <= tau0`` or the aggregate marker ``None``, which stands for all
``tau > tau0`` and carries the arm's stationary marginal. Information states
snap to grid points arm by arm, so the grid is closed under play: an arm
aging past ``tau0`` joins the aggregate, and an aggregated arm stays there
until it is played.

The grid itself depends only on the state-space sizes and ``tau0``; the
transition model enters through :func:`grid_model`, which is cheap enough to
recompute every time an estimate changes.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from sklearn.base import BaseEstimator

from .belief import (Belief, InformationState, advance_information_state, belief_of,
                     expected_reward, initial_tau)
from .exceptions import (ConvergenceError, DomainError, GridTooLargeError, ValidationError)
from .markov import check_transition_matrix, stationary_distribution
from .oracle import backward_induction, saturation_time

__all__ = [
    "BeliefGrid", "GridModel", "AROESolution", "PartitionSet", "PartitionReport", "AROESolver",
    "build_grid", "partition_vector_count", "grid_model", "value_iterate", "expected_reward",
    "suboptimality_gap", "optimal_action_set", "build_partition", "probe_assumptions",
    "check_finite_horizon_sandwich", "solution_table",
]

AGG = None


def _snap_key(s, tau, tau0):
    return tuple((x, t) if t <= tau0 else AGG for x, t in zip(s, tau))


def _sort_key(key):
    # aggregates sort after every exact pair
    return tuple((1, 0, 0) if a is AGG else (0, a[0], a[1]) for a in key)


@dataclass
class BeliefGrid:
    """Finite set of grid points closed under play.

    Attributes
    ----------
    tau0 : int
        Truncation; arms unobserved for more than ``tau0`` steps are aggregated.
    sizes : tuple of int
        Number of states per arm.
    keys : list of tuple
        Per point, one ``(s, tau)`` pair or ``None`` per arm. Sorted, so the
        reference point (index 0) is the lexicographically first.
    succ : ndarray of shape (n, K, S_max)
        Index of the point reached by playing ``u`` and observing ``y``.
    """

    tau0: int
    sizes: tuple
    keys: list
    index: dict = field(repr=False)
    succ: np.ndarray = field(repr=False)
    rows: np.ndarray = field(repr=False)    # (n, K) row into the per-arm marginal tables

    @property
    def n(self) -> int:
        return len(self.keys)

    @property
    def K(self) -> int:
        return len(self.sizes)

    @property
    def reference_point(self) -> int:
        return 0

    def __len__(self):
        return self.n

    def is_aggregate(self, j: int) -> bool:
        return any(a is AGG for a in self.keys[j])

    def aggregated_arms(self, j: int) -> tuple:
        return tuple(k for k, a in enumerate(self.keys[j]) if a is AGG)

    def snap(self, info: InformationState) -> int:
        """Grid point containing ``info``."""
        key = _snap_key(info.s, info.tau, self.tau0)
        j = self.index.get(key)
        if j is None:
            raise DomainError(f"{info} does not map to a grid point (unreachable pattern)")
        return j

    def is_exact(self, info: InformationState) -> bool:
        """True when ``info`` is the grid point itself (no arm aggregated)."""
        return max(info.tau) <= self.tau0

    def representative(self, j: int, tau_agg: Optional[Sequence[int]] = None) -> InformationState:
        """An information state in point ``j``; aggregated arms get ``tau_agg[k]``
        (default ``tau0 + 1``) and state 0."""
        s, tau = [], []
        for k, a in enumerate(self.keys[j]):
            if a is AGG:
                s.append(0)
                tau.append(self.tau0 + 1 if tau_agg is None else tau_agg[k])
            else:
                s.append(a[0])
                tau.append(a[1])
        return InformationState(tuple(s), tuple(tau))

    def label(self, j: int) -> str:
        return " ".join("*" if a is AGG else f"{a[0]}@{a[1]}" for a in self.keys[j])


def partition_vector_count(sizes: Sequence[int], tau0: int) -> int:
    """Number of non-empty partition sets: every arm is exact ``(s, tau)`` with
    ``tau <= tau0`` or aggregated, minus the all-aggregated vector."""
    out = 1
    for n in sizes:
        out *= 1 + n * tau0
    return out - 1


def build_grid(sizes, tau0: int, max_points: int = 200_000) -> BeliefGrid:
    """Grid points reachable after the initialization plays.

    Parameters
    ----------
    sizes : sequence of int or BanditInstance
        State-space sizes per arm.
    tau0 : int
        Truncation, ``>= 1``.
    max_points : int
        Cap; exceeding it raises :class:`GridTooLargeError`.
    """
    if hasattr(sizes, "sizes"):
        sizes = sizes.sizes
    sizes = tuple(int(n) for n in sizes)
    tau0 = int(tau0)
    if tau0 < 1:
        raise DomainError("tau0 must be >= 1")
    K, S = len(sizes), max(sizes)
    tau_init = initial_tau(K)
    seen = set()
    frontier = []
    for s in itertools.product(*(range(n) for n in sizes)):
        key = _snap_key(s, tau_init, tau0)
        if key not in seen:
            seen.add(key)
            frontier.append(key)
    while frontier:
        nxt = []
        for key in frontier:
            for u in range(K):
                for y in range(sizes[u]):
                    new = tuple((y, 1) if k == u else
                                (AGG if a is AGG or a[1] + 1 > tau0 else (a[0], a[1] + 1))
                                for k, a in enumerate(key))
                    if new not in seen:
                        seen.add(new)
                        nxt.append(new)
                        if len(seen) > max_points:
                            raise GridTooLargeError(f"grid exceeds {max_points} points at tau0={tau0}")
        frontier = nxt
    keys = sorted(seen, key=_sort_key)
    index = {k: i for i, k in enumerate(keys)}
    succ = np.zeros((len(keys), K, S), dtype=np.int64)
    rows = np.zeros((len(keys), K), dtype=np.int64)
    for i, key in enumerate(keys):
        for u in range(K):
            for y in range(S):
                yy = min(y, sizes[u] - 1)   # padding columns carry zero probability
                new = tuple((yy, 1) if k == u else
                            (AGG if a is AGG or a[1] + 1 > tau0 else (a[0], a[1] + 1))
                            for k, a in enumerate(key))
                succ[i, u, y] = index[new]
        for k, a in enumerate(key):
            rows[i, k] = sizes[k] * tau0 if a is AGG else a[0] * tau0 + a[1] - 1
    return BeliefGrid(tau0, sizes, keys, index, succ, rows)


@dataclass
class GridModel:
    """Observation probabilities and expected rewards at every grid point."""

    prob: np.ndarray    # (n, K, S_max) current marginal of each arm
    rew: np.ndarray     # (n, K)
    tables: list = field(repr=False)   # per arm: rows P^tau[s] (tau = 1..tau0) then pi


def _arm_tables(P, tau0):
    out = []
    for Pk in P:
        Pk = np.asarray(Pk, dtype=float)
        n = Pk.shape[0]
        tab = np.empty((n * tau0 + 1, n))
        Pt = Pk
        idx = np.arange(n) * tau0
        for t in range(tau0):
            tab[idx + t] = Pt
            Pt = Pt @ Pk
        tab[-1] = stationary_distribution(Pk)
        out.append(tab)
    return out


def grid_model(grid: BeliefGrid, P, rewards) -> GridModel:
    tables = _arm_tables(P, grid.tau0)
    K, S = grid.K, grid.succ.shape[2]
    prob = np.zeros((grid.n, K, S))
    rew = np.empty((grid.n, K))
    for k in range(K):
        m = tables[k][grid.rows[:, k]]
        prob[:, k, : m.shape[1]] = m
        rew[:, k] = m @ np.asarray(rewards[k], dtype=float)
    return GridModel(prob, rew, tables)


def _check_assumption(P, allow_nonpositive):
    if all(np.all(np.asarray(Pk) > 0) for Pk in P):
        return
    if not allow_nonpositive:
        raise ValidationError("transition matrices must have all entries positive "
                              "(pass allow_nonpositive=True to override)")
    warnings.warn("solving with a transition matrix that has zero entries; "
                  "convergence of value iteration is not guaranteed", RuntimeWarning, stacklevel=3)


@dataclass
class AROESolution:
    """Gain, bias and the model they were solved for.

    ``bias[j]`` is the bias at grid point ``j``; ``bias[reference_point] == 0``.
    """

    gain: float
    bias: np.ndarray
    iterations: int
    span_residual: float
    grid: BeliefGrid = field(repr=False)
    model: GridModel = field(repr=False)
    P: tuple = field(repr=False)
    rewards: tuple = field(repr=False)
    spans: np.ndarray = field(repr=False, default=None)
    damping: float = 1.0
    reference_point: int = 0

    def bias_map(self) -> dict:
        return {k: float(h) for k, h in zip(self.grid.keys, self.bias)}

    def q_grid(self) -> np.ndarray:
        """``L(psi, u, h, P)`` at every grid point, shape ``(n, K)``."""
        m = self.model
        return m.rew + np.einsum("nky,nky->nk", m.prob, self.bias[self.grid.succ])

    def gaps_grid(self) -> np.ndarray:
        q = self.q_grid()
        return q.max(axis=1, keepdims=True) - q

    def q_values(self, info: InformationState) -> np.ndarray:
        """Right-hand side for every arm at ``info``.

        Grid points use the stored tables. Other information states use their
        exact current marginals with successors snapped to the grid.
        """
        grid = self.grid
        if grid.is_exact(info):
            j = grid.snap(info)
            m = self.model
            return m.rew[j] + np.einsum("ky,ky->k", m.prob[j], self.bias[grid.succ[j]])
        b = belief_of(info, self.P)
        q = np.empty(grid.K)
        for u in range(grid.K):
            r = np.asarray(self.rewards[u], dtype=float)
            cont = 0.0
            for y, py in enumerate(b.marginals[u]):
                if py > 0:
                    cont += py * self.bias[grid.snap(advance_information_state(info, u, y))]
            q[u] = b.marginals[u] @ r + cont
        return q

    def h(self, info: InformationState) -> float:
        return float(self.bias[self.grid.snap(info)])


def value_iterate(grid: BeliefGrid, P, rewards, tol: float = 1e-9, max_iters: int = 100_000,
                  *, h0=None, damping: float = 1.0, allow_nonpositive: bool = False,
                  check: bool = True) -> AROESolution:
    """Relative value iteration on the grid.

    Applies ``v <- (1 - damping) v + damping F v`` with
    ``(F v)(psi) = max_u { rbar(psi, u) + sum_y V(psi, y, u) v(T(psi, y, u)) }``,
    re-centering at the reference point after every sweep, until the span of
    successive differences is at most ``tol``. ``damping < 1`` is the standard
    aperiodicity transform; it leaves the bias unchanged and scales the gain,
    which is undone when reporting ``g``.

    Raises
    ------
    ConvergenceError
        If ``max_iters`` sweeps do not reach ``tol``.
    """
    P = tuple(np.asarray(Pk, dtype=float) for Pk in P)
    if check:
        P = tuple(check_transition_matrix(Pk, name=f"P[{k}]") for k, Pk in enumerate(P))
        _check_assumption(P, allow_nonpositive)
    if not 0 < damping <= 1:
        raise DomainError("damping must lie in (0, 1]")
    model = grid_model(grid, P, rewards)
    prob, rew, succ = model.prob, model.rew, grid.succ
    v = np.zeros(grid.n) if h0 is None else np.array(h0, dtype=float)
    ref = grid.reference_point
    spans = []
    diff = np.zeros(grid.n)
    span = np.inf
    it = 0
    while it < max_iters:
        it += 1
        fv = (rew + np.einsum("nky,nky->nk", prob, v[succ])).max(axis=1)
        if damping < 1.0:
            fv = (1.0 - damping) * v + damping * fv
        diff = fv - v
        span = float(diff.max() - diff.min())
        spans.append(span)
        v = fv - fv[ref]
        if span <= tol:
            break
    else:
        raise ConvergenceError(f"value iteration did not converge in {max_iters} sweeps "
                               f"(span {span:.3e})", last_span=span)
    gain = 0.5 * (diff.max() + diff.min()) / damping
    return AROESolution(gain=float(gain), bias=v, iterations=it, span_residual=span, grid=grid,
                        model=model, P=P, rewards=tuple(np.asarray(r, dtype=float) for r in rewards),
                        spans=np.asarray(spans), damping=damping, reference_point=ref)


def suboptimality_gap(info: InformationState, u: int, solution: AROESolution) -> float:
    """``max_v L(psi, v) - L(psi, u)`` at the belief of ``info``."""
    q = solution.q_values(info)
    return float(q.max() - q[u])


def optimal_action_set(info: InformationState, solution: AROESolution, gap_tol: float = 1e-8) -> set:
    q = solution.q_values(info)
    return {int(u) for u in np.flatnonzero(q.max() - q <= gap_tol)}


# ---------------------------------------------------------------- partition


@dataclass
class PartitionSet:
    """One set of the partition: a grid point and the information states it holds.

    For an aggregate set ``members`` lists probe states (aggregated arms at
    ``tau`` from ``tau0 + 1`` to the probe horizon, plus the stationary limit
    as ``None``); ``member_joints`` holds their joint beliefs.
    """

    id: int
    vector: tuple
    aggregate: bool
    members: list
    center: Belief
    optimal_at_center: set
    diameter: float
    member_joints: np.ndarray = field(repr=False)
    center_joint: np.ndarray = field(repr=False)

    def distance_to_hull(self, joint) -> float:
        """Exact L1 distance from a joint belief to the convex hull of the members."""
        return _hull_distance(np.asarray(joint, dtype=float), self.member_joints)

    def contains(self, belief, epsilon: float) -> bool:
        """Membership in the epsilon-extension (L1-inflated hull)."""
        joint = belief.joint() if isinstance(belief, Belief) else np.asarray(belief, dtype=float)
        if epsilon < 0:
            raise DomainError("epsilon must be nonnegative")
        # cheap rejection: center distance minus diameter bounds the hull distance
        if np.abs(joint - self.center_joint).sum() - self.diameter > epsilon + 1e-12:
            return False
        return self.distance_to_hull(joint) <= epsilon + 1e-12


def _hull_distance(x, M) -> float:
    """``min_lambda ||x - lambda @ M||_1`` over the simplex (``M`` rows are points)."""
    m, d = M.shape
    if m == 1:
        return float(np.abs(x - M[0]).sum())
    # variables: lambda (m), e (d); minimize sum e, e >= +-(x - M^T lambda)
    c = np.concatenate([np.zeros(m), np.ones(d)])
    A = np.block([[-M.T, -np.eye(d)], [M.T, -np.eye(d)]])
    b = np.concatenate([-x, x])
    A_eq = np.concatenate([np.ones(m), np.zeros(d)])[None, :]
    res = linprog(c, A_ub=A, b_ub=b, A_eq=A_eq, b_eq=[1.0], bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"hull distance LP failed: {res.message}")
    return float(max(res.fun, 0.0))


def _hull_gap(M1, M2) -> float:
    """``min ||lambda @ M1 - mu @ M2||_1`` over two simplices."""
    m1, d = M1.shape
    m2 = M2.shape[0]
    c = np.concatenate([np.zeros(m1 + m2), np.ones(d)])
    A = np.block([[M1.T, -M2.T, -np.eye(d)], [-M1.T, M2.T, -np.eye(d)]])
    A_eq = np.zeros((2, m1 + m2 + d))
    A_eq[0, :m1] = 1
    A_eq[1, m1:m1 + m2] = 1
    res = linprog(c, A_ub=A, b_ub=np.zeros(2 * d), A_eq=A_eq, b_eq=[1.0, 1.0],
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"hull gap LP failed: {res.message}")
    return float(max(res.fun, 0.0))


def _joint(marginals):
    out = np.asarray(marginals[0])
    for m in marginals[1:]:
        out = np.multiply.outer(out, m)
    return np.asarray(out).reshape(-1)


def _member_states(grid, j, probe_horizon):
    """Probe members of point ``j``: tuples of per-arm (s, tau), tau None = limit."""
    per_arm = []
    for k, a in enumerate(grid.keys[j]):
        if a is AGG:
            taus = list(range(grid.tau0 + 1, max(probe_horizon, grid.tau0 + 1) + 1))
            opts = [(s, t) for t in taus for s in range(grid.sizes[k])] + [(0, None)]
        else:
            opts = [a]
        per_arm.append(opts)
    return list(itertools.product(*per_arm))


@dataclass
class PartitionReport:
    sets: list
    epsilon: float
    overlaps: list          # pairs (l, l') whose epsilon-extensions intersect

    @property
    def overlap(self) -> bool:
        return bool(self.overlaps)

    def locate(self, grid: BeliefGrid, info: InformationState) -> PartitionSet:
        return self.sets[grid.snap(info)]


def build_partition(solution: AROESolution, epsilon: float = 0.0, *, probe_horizon: int = 64,
                    gap_tol: float = 1e-8, max_members: int = 5000,
                    check_overlaps: bool = True) -> PartitionReport:
    """Partition sets with centers, optimal sets at the centers and diameters.

    Parameters
    ----------
    solution : AROESolution
        Solved on the grid whose points define the sets.
    epsilon : float
        Extension radius used for the overlap flags.
    probe_horizon : int
        Largest ``tau`` used to sample aggregate members.
    """
    grid, P = solution.grid, solution.P
    pis = [stationary_distribution(Pk) for Pk in P]
    q = solution.q_grid()
    sets = []
    for j, key in enumerate(grid.keys):
        members = _member_states(grid, j, probe_horizon)
        if len(members) > max_members:
            raise GridTooLargeError(f"set {j} has {len(members)} probe members (cap {max_members})")
        joints = []
        for mem in members:
            margs = []
            for k, (s, t) in enumerate(mem):
                margs.append(pis[k] if t is None else np.linalg.matrix_power(P[k], t)[s])
            joints.append(_joint(margs))
        joints = np.array(joints)
        center_m = [pis[k] if a is AGG else solution.model.tables[k][grid.rows[j, k]]
                    for k, a in enumerate(key)]
        center = Belief(center_m)
        cj = _joint(center_m)
        if len(joints) > 1:
            diam = float(max(np.abs(joints - row).sum(axis=1).max() for row in joints))
        else:
            diam = 0.0
        opt = {int(u) for u in np.flatnonzero(q[j].max() - q[j] <= gap_tol)}
        sets.append(PartitionSet(j, key, grid.is_aggregate(j), members, center, opt, diam, joints, cj))
    overlaps = []
    if check_overlaps:
        cjs = np.array([s.center_joint for s in sets])
        diams = np.array([s.diameter for s in sets])
        for a in range(len(sets)):
            lower = np.abs(cjs[a + 1:] - cjs[a]).sum(axis=1) - diams[a + 1:] - diams[a]
            for off in np.flatnonzero(lower <= 2 * epsilon + 1e-12):
                b = a + 1 + int(off)
                if _hull_gap(sets[a].member_joints, sets[b].member_joints) <= 2 * epsilon + 1e-12:
                    overlaps.append((a, b))
    return PartitionReport(sets, float(epsilon), overlaps)


def probe_assumptions(solution: AROESolution, partition: PartitionReport, gap_tol: float = 1e-8,
                      max_probes_per_set: int = 64) -> dict:
    """Empirical check of optimal-set containment and uniqueness on member beliefs.

    Returns counts of probed beliefs, of beliefs whose optimal set is not
    contained in the set's center optimal set, and of beliefs with more than
    one optimal arm, plus the offending ``(set id, member)`` pairs.
    """
    probes = not_subset = ties = 0
    bad = []
    for ps in partition.sets:
        members = [m for m in ps.members if all(t is not None for _, t in m)]
        step = max(1, len(members) // max_probes_per_set)
        for mem in members[::step]:
            info = InformationState(tuple(s for s, _ in mem), tuple(t for _, t in mem))
            opt = optimal_action_set(info, solution, gap_tol)
            probes += 1
            if not opt <= ps.optimal_at_center:
                not_subset += 1
                bad.append((ps.id, mem))
            if len(opt) > 1:
                ties += 1
    return {"probes": probes, "not_subset": not_subset, "non_unique": ties, "violations": bad}


def check_finite_horizon_sandwich(solution: AROESolution, T: int, slack: float = 1e-6,
                                  sat_tol: float = 1e-14) -> dict:
    """Compare exact ``T``-step optimal values with the solved bias at every grid point.

    Checks ``h - sup h <= h_T - T g <= h - inf h`` for horizons ``1..T``.
    Aggregated arms start at their stationary law in the exact recursion.
    """
    grid, P = solution.grid, solution.P
    tau_sat = tuple(saturation_time(Pk, sat_tol) for Pk in P)
    roots = [grid.representative(j, tau_agg=tau_sat) for j in range(grid.n)]
    space, V, _ = backward_induction(P, solution.rewards, roots, T, store_policy=False,
                                     values_by_horizon=True, tau_sat=tau_sat)
    root_idx = np.array([space.index[tuple((x, t) if t < ts else (-1, ts)
                                           for x, t, ts in zip(r.s, r.tau, tau_sat))] for r in roots])
    h = solution.bias
    hi, lo = h - h.min(), h - h.max()
    worst_low = worst_high = np.inf
    violations = []
    for t in range(1, T + 1):
        x = V[t, root_idx] - t * solution.gain
        m_low, m_high = x - lo, hi - x
        worst_low = min(worst_low, float(m_low.min()))
        worst_high = min(worst_high, float(m_high.min()))
        for j in np.flatnonzero((m_low < -slack) | (m_high < -slack)):
            violations.append((t, int(j), float(min(m_low[j], m_high[j]))))
    return {"T": T, "points": grid.n, "min_lower_margin": worst_low,
            "min_upper_margin": worst_high, "violations": violations, "ok": not violations}


def solution_table(solution: AROESolution) -> list:
    """Rows ``(point, aggregate, g, h, delta_0, ..., delta_{K-1})`` for export."""
    gaps = solution.gaps_grid()
    return [(solution.grid.label(j), int(solution.grid.is_aggregate(j)), solution.gain,
             float(solution.bias[j]), *map(float, gaps[j])) for j in range(solution.grid.n)]


class AROESolver(BaseEstimator):
    """Estimator wrapper: ``fit`` solves the grid, ``predict`` returns greedy arms.

    Parameters
    ----------
    tau0 : int
        Grid truncation.
    tol, max_iters, damping :
        Passed to :func:`value_iterate`.
    gap_tol : float
        Tolerance for optimal-set extraction.
    allow_nonpositive : bool
        Solve even when some transition entry is zero (with a warning).
    """

    def __init__(self, tau0: int = 8, tol: float = 1e-9, max_iters: int = 100_000,
                 damping: float = 1.0, gap_tol: float = 1e-8, allow_nonpositive: bool = False):
        self.tau0 = tau0
        self.tol = tol
        self.max_iters = max_iters
        self.damping = damping
        self.gap_tol = gap_tol
        self.allow_nonpositive = allow_nonpositive

    def fit(self, instance, P=None, h0=None):
        P = instance.transitions if P is None else P
        self.grid_ = build_grid(instance.sizes, self.tau0)
        self.solution_ = value_iterate(self.grid_, P, instance.rewards, self.tol, self.max_iters,
                                       h0=h0, damping=self.damping,
                                       allow_nonpositive=self.allow_nonpositive)
        self.gain_ = self.solution_.gain
        return self

    def _check_fitted(self):
        if not hasattr(self, "solution_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("AROESolver is not fitted yet; call fit first")

    def decision_function(self, infos) -> np.ndarray:
        self._check_fitted()
        return np.array([self.solution_.q_values(i) for i in infos])

    def predict(self, infos) -> np.ndarray:
        return np.argmax(self.decision_function(infos), axis=1)

    def optimal_actions(self, info: InformationState) -> set:
        self._check_fitted()
        return optimal_action_set(info, self.solution_, self.gap_tol)
