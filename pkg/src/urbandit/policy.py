"""Adaptive learning policies and simple baselines.

Every policy follows the same protocol, driven by :func:`urbandit.simulation.simulate`:

* ``start(sizes, rewards)`` resets the policy for a new run;
* ``observe_init(k, obs)`` reports the initialization play of arm ``k``;
* ``choose(t)`` returns the arm to play at decision time ``t >= 1``;
* ``observe(t, arm, obs)`` reports the state seen on the played arm.

``phase`` holds ``"explore"`` or ``"exploit"`` for the last choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator

from .aroe import AGG, AROESolution, build_grid, build_partition, value_iterate
from .belief import InformationState, initial_tau
from .estimation import CountTables, EstimatedModel, estimate, exploration_set, record_step
from .exceptions import ConfigError, ConvergenceError, DomainError

# --------------------------------------------------------------- schedules

L_FUNCTIONS: dict = {
    "loglog": lambda t: 1.0 + math.log1p(math.log(t)),
    "sqrtlog": lambda t: math.sqrt(1.0 + math.log(t)),
}


@dataclass(frozen=True)
class ExplorationSchedule:
    """``f(t) = L log t`` (fixed) or ``f(t) = L(t) log t`` (adaptive)."""

    kind: str
    L: float = 0.0
    L_fn: Optional[Callable] = field(default=None, compare=False)
    name: str = ""

    @classmethod
    def fixed(cls, L: float) -> "ExplorationSchedule":
        if not L > 0:
            raise ConfigError(f"exploration constant must be positive, got {L}")
        return cls("fixed", float(L), None, f"fixed:{L:g}")

    @classmethod
    def adaptive(cls, L_fn="loglog") -> "ExplorationSchedule":
        name = L_fn if isinstance(L_fn, str) else getattr(L_fn, "__name__", "custom")
        if isinstance(L_fn, str):
            if L_fn not in L_FUNCTIONS:
                raise ConfigError(f"unknown L(t) function {L_fn!r}; known: {sorted(L_FUNCTIONS)}")
            L_fn = L_FUNCTIONS[L_fn]
        probes = [1, 2, 3, 10, 100, 10**4, 10**6, 10**9]
        vals = [L_fn(t) for t in probes]
        if abs(vals[0] - 1.0) > 1e-12:
            raise ConfigError(f"adaptive L(t) must satisfy L(1) = 1, got {vals[0]}")
        if any(b < a for a, b in zip(vals, vals[1:])) or not vals[-1] > vals[0]:
            raise ConfigError("adaptive L(t) must be nondecreasing and grow on probe points")
        return cls("adaptive", 0.0, L_fn, f"adaptive:{name}")

    def L_at(self, t: float) -> float:
        return self.L if self.kind == "fixed" else float(self.L_fn(t))

    def __call__(self, t: float) -> float:
        return schedule_value(self, t)


def schedule_value(schedule: ExplorationSchedule, t: float) -> float:
    """Exploration threshold ``f(t)``; zero at ``t = 1``."""
    if t < 1:
        raise DomainError("t must be >= 1")
    return schedule.L_at(t) * math.log(t)


def confidence_radius(t: int, n_plays: int) -> float:
    """``sqrt(2 log t / N_u)``."""
    if n_plays < 1:
        raise DomainError("radius needs at least one play of the arm")
    return math.sqrt(2.0 * math.log(t) / n_plays)


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class ALAConfig:
    schedule: ExplorationSchedule = field(default_factory=lambda: ExplorationSchedule.fixed(10.0))
    tau0: int = 8
    index_budget: int = 16
    tie_break: str = "first"
    resolve_every: int = 1
    seed: int = 0
    solve_tol: float = 1e-9
    max_iters: int = 20_000

    def __post_init__(self):
        if self.index_budget < 1:
            raise ConfigError("index_budget must be >= 1")
        if self.resolve_every < 1:
            raise ConfigError("resolve_every must be >= 1")
        if self.tau0 < 1:
            raise ConfigError("tau0 must be >= 1")
        if self.tie_break not in ("first", "uniform"):
            raise ConfigError(f"tie_break must be 'first' or 'uniform', got {self.tie_break!r}")

    def replace(self, **kw) -> "ALAConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return ALAConfig(**d)


def solve(grid, P, rewards, tol=1e-9, max_iters=20_000, h0=None) -> AROESolution:
    """Value iteration with a damped retry when the plain sweep does not settle."""
    try:
        return value_iterate(grid, P, rewards, tol, max_iters, h0=h0, check=False)
    except ConvergenceError:
        return value_iterate(grid, P, rewards, tol, 10 * max_iters, h0=h0, damping=0.5, check=False)


# ------------------------------------------------------------------- index


class IndexStructure:
    """Model-free lookup data for the optimistic index on one grid."""

    def __init__(self, grid):
        K = grid.K
        self.grid = grid
        self.offsets = np.concatenate([[0], np.cumsum(grid.sizes)])
        # observation-epoch row of arm k at each point, indexing the current-marginal
        # table extended by an identity block: (s, 1) -> e_s, (s, tau) -> row of P^(tau-1)
        self.obs_rows = np.empty((grid.n, K), dtype=np.int64)
        for k in range(K):
            n, t0 = grid.sizes[k], grid.tau0
            base = n * t0 + 1
            for j, key in enumerate(grid.keys):
                a = key[k]
                if a is AGG:
                    self.obs_rows[j, k] = n * t0
                elif a[1] == 1:
                    self.obs_rows[j, k] = base + a[0]
                else:
                    self.obs_rows[j, k] = a[0] * t0 + a[1] - 2
        self.classes = {}
        for u in range(K):
            keep = np.ones(self.offsets[-1], dtype=bool)
            keep[self.offsets[u]:self.offsets[u + 1]] = False
            for y in range(grid.sizes[u]):
                pts = np.array([j for j, key in enumerate(grid.keys) if key[u] == (y, 1)],
                               dtype=np.int64)
                self.classes[u, y] = (pts, np.flatnonzero(keep))


class IndexCache:
    """Per-solution data for the optimistic index: observation-epoch marginals
    of the grid points in each class ``(u, y)`` (arm ``u`` just observed in
    ``y``) and their bias values."""

    def __init__(self, solution: AROESolution, structure: Optional[IndexStructure] = None):
        grid = solution.grid
        st = structure if structure is not None else IndexStructure(grid)
        self.solution = solution
        obs = np.empty((grid.n, st.offsets[-1]))
        for k in range(grid.K):
            tab = np.vstack([solution.model.tables[k], np.eye(grid.sizes[k])])
            obs[:, st.offsets[k]:st.offsets[k + 1]] = tab[st.obs_rows[:, k]]
        self.classes = {key: (obs[np.ix_(pts, cols)], solution.bias[pts])
                        for key, (pts, cols) in st.classes.items()}


def _corner_candidates(Pk, r):
    """Shift mass ``r/2`` (clipped) toward each column in every row."""
    out = []
    n = Pk.shape[0]
    for j in range(n):
        Q = Pk.copy()
        add = np.minimum(r / 2.0, 1.0 - Q[:, j])
        others = Q.copy()
        others[:, j] = 0.0
        tot = others.sum(axis=1)
        scale = np.where(tot > 0, add / np.where(tot > 0, tot, 1.0), 0.0)
        Q = Q - others * scale[:, None]
        Q[:, j] += add
        out.append(Q)
    return out


def _random_candidates(Pk, r, m, rng):
    """``m`` matrices ``P + lam (Q - P)`` with Dirichlet rows ``Q`` inside the ball."""
    n = Pk.shape[0]
    Q = rng.dirichlet(np.ones(n), size=(m, n))
    D = Q - Pk
    norm = np.abs(D).sum(axis=2).max(axis=1)
    lam = np.minimum(1.0, r / np.maximum(norm, 1e-300)) * rng.random(m)
    return Pk + lam[:, None, None] * D


def optimistic_index(info: InformationState, u: int, cache: IndexCache, q_center: float,
                     radius: float, budget: int, rng) -> tuple:
    """Approximate ``sup`` of the right-hand side over models in the L1 ball.

    Candidates: the estimate itself (value ``q_center``), per other arm and
    column a corner shift, and ``budget`` seeded random interior points that
    perturb all other arms together. A candidate's successor belief is valued
    at the nearest grid point (L1 over the other arms' marginals) among the
    points where arm ``u`` was just observed in ``y``.

    Returns ``(value, origin)`` with origin in ``{"center", "corner", "random"}``.
    """
    if radius <= 1e-15 or cache.solution.grid.K == 1:
        return q_center, "center"
    sol = cache.solution
    P = sol.P
    K = sol.grid.K
    others = [k for k in range(K) if k != u]
    # observation-epoch marginals of the other arms under the estimate
    phi = [np.linalg.matrix_power(P[k], info.tau[k] - 1)[info.s[k]] for k in others]
    cand = []   # list of per-candidate concatenated successor marginals
    origin = []
    for i, k in enumerate(others):
        base = [f @ P[kk] for f, kk in zip(phi, others)]
        for Q in _corner_candidates(P[k], radius):
            m = list(base)
            m[i] = phi[i] @ Q
            cand.append(np.concatenate(m))
            origin.append("corner")
    rand = np.hstack([np.einsum("i,cij->cj", f, _random_candidates(P[k], radius, budget, rng))
                      for f, k in zip(phi, others)])
    cand = np.vstack([np.array(cand).reshape(-1, rand.shape[1]), rand])
    origin += ["random"] * budget
    cur = np.linalg.matrix_power(P[u], info.tau[u])[info.s[u]]
    rbar = float(cur @ sol.rewards[u])
    val = np.full(len(cand), rbar)
    for y, py in enumerate(cur):
        if py <= 0:
            continue
        pts, h = cache.classes[u, y]
        d = np.abs(cand[:, None, :] - pts[None, :, :]).sum(axis=2)
        val += py * h[np.argmin(d, axis=1)]
    best = int(np.argmax(val))
    if val[best] > q_center:
        return float(val[best]), origin[best]
    return q_center, "center"


# ------------------------------------------------------------------- agents


@dataclass
class AgentState:
    tables: CountTables
    model: EstimatedModel
    info: Optional[InformationState]
    solution: Optional[AROESolution] = None
    solved_version: int = -1
    version: int = 0
    phase: str = "init"
    t: int = 0
    prev_arm: Optional[int] = None
    prev_obs: Optional[int] = None


class ALA(BaseEstimator):
    """Adaptive learning with an optimistic index.

    Parameters mirror :class:`ALAConfig`; ``schedule`` is an
    :class:`ExplorationSchedule`.
    """

    name = "ala"

    def __init__(self, schedule: Optional[ExplorationSchedule] = None, tau0: int = 8,
                 index_budget: int = 16, tie_break: str = "first", resolve_every: int = 1,
                 seed: int = 0, solve_tol: float = 1e-9, max_iters: int = 20_000):
        self.schedule = schedule
        self.tau0 = tau0
        self.index_budget = index_budget
        self.tie_break = tie_break
        self.resolve_every = resolve_every
        self.seed = seed
        self.solve_tol = solve_tol
        self.max_iters = max_iters

    @classmethod
    def from_config(cls, config: ALAConfig, seed: Optional[int] = None):
        return cls(config.schedule, config.tau0, config.index_budget, config.tie_break,
                   config.resolve_every, config.seed if seed is None else seed, config.solve_tol,
                   config.max_iters)

    @property
    def config(self) -> ALAConfig:
        return ALAConfig(self.schedule or ExplorationSchedule.fixed(10.0), self.tau0,
                         self.index_budget, self.tie_break, self.resolve_every, self.seed,
                         self.solve_tol, self.max_iters)

    # protocol ------------------------------------------------------------

    def start(self, sizes, rewards):
        cfg = self.config
        self._cfg = cfg
        self.sizes_ = tuple(int(n) for n in sizes)
        self.rewards_ = tuple(np.asarray(r, dtype=float) for r in rewards)
        self.grid_ = build_grid(self.sizes_, cfg.tau0)
        self._structure = IndexStructure(self.grid_)
        tables = CountTables.zeros(self.sizes_)
        self.state_ = AgentState(tables, estimate(tables), None)
        self._rng = np.random.default_rng(np.random.SeedSequence(int(self.seed) & (2**64 - 1)))
        self._init_obs = [None] * len(self.sizes_)
        self._exploit_count = 0
        self._cache = None
        self.phase = "init"
        self.index_log = []
        self.last_indices = None
        self.on_exploit = None
        return self

    def observe_init(self, k, obs):
        st = self.state_
        record_step(st.tables, st.prev_arm, k, st.prev_obs, obs)
        st.prev_arm, st.prev_obs = k, obs
        self._init_obs[k] = obs
        if all(o is not None for o in self._init_obs):
            st.info = InformationState(tuple(self._init_obs), initial_tau(len(self.sizes_)))
        st.model = estimate(st.tables)
        st.version += 1

    def _explore_choice(self, W):
        owners = {k for k, _ in W}
        prev = self.state_.prev_arm
        if prev is not None and prev in owners:
            return prev
        return W[0][0]

    def _ensure_solution(self):
        st = self.state_
        stale = st.solution is None or st.solved_version != st.version
        if stale and (st.solution is None or self._exploit_count % self._cfg.resolve_every == 0):
            h0 = None if st.solution is None else st.solution.bias
            st.solution = solve(self.grid_, tuple(st.model.normalized), self.rewards_,
                                self._cfg.solve_tol, self._cfg.max_iters, h0=h0)
            st.solved_version = st.version
            self._cache = None
        return st.solution

    def _argmax(self, values):
        values = np.asarray(values)
        top = np.flatnonzero(values >= values.max() - 1e-12)
        if self._cfg.tie_break == "uniform" and top.size > 1:
            return int(self._rng.choice(top))
        return int(top[0])

    def _exploit_choice(self, t):
        st = self.state_
        sol = self._ensure_solution()
        q = sol.q_values(st.info)
        if self._cache is None:
            self._cache = IndexCache(sol, self._structure)
        idx = np.empty(len(self.sizes_))
        for u in range(len(self.sizes_)):
            r = confidence_radius(t, int(st.tables.plays[u]))
            idx[u], _ = optimistic_index(st.info, u, self._cache, float(q[u]), r,
                                         self._cfg.index_budget, self._rng)
        self.last_indices = idx
        return self._argmax(idx)

    def choose(self, t: int) -> int:
        st = self.state_
        if st.info is None:
            raise DomainError("initialization plays are incomplete")
        st.t = t
        W = exploration_set(st.tables, t, schedule_value(self._cfg.schedule, t))
        if W:
            self.phase = st.phase = "explore"
            return self._explore_choice(W)
        self.phase = st.phase = "exploit"
        if self.on_exploit is not None:
            self.on_exploit(t, st)
        arm = self._exploit_choice(t)
        self._exploit_count += 1
        return arm

    def observe(self, t, arm, obs):
        st = self.state_
        if record_step(st.tables, st.prev_arm, arm, st.prev_obs, obs):
            st.model = estimate(st.tables)
            st.version += 1
        st.prev_arm, st.prev_obs = arm, obs
        s = list(st.info.s)
        s[arm] = obs
        st.info = InformationState(tuple(s), tuple(1 if k == arm else x + 1
                                                   for k, x in enumerate(st.info.tau)))

    def estimated_belief(self) -> np.ndarray:
        """Current marginals of every arm under the normalized estimate, concatenated."""
        st = self.state_
        return np.concatenate([np.linalg.matrix_power(Pk, t)[s] for Pk, s, t in
                               zip(st.model.normalized, st.info.s, st.info.tau)])


class ALAFP(ALA):
    """Finite-partition variant: exploit by the optimal set at the partition center.

    Plays the lowest arm of ``O*(G_l; P_hat)``, the optimal set at the center of
    the grid point holding the current information state. ``choices`` logs
    ``(t, arm, optimal set)`` at every exploitation step.
    """

    name = "ala_fp"

    def __init__(self, schedule=None, tau0: int = 8, index_budget: int = 16,
                 tie_break: str = "first", resolve_every: int = 1, seed: int = 0,
                 solve_tol: float = 1e-9, max_iters: int = 20_000, gap_tol: float = 1e-8):
        super().__init__(schedule, tau0, index_budget, tie_break, resolve_every, seed,
                         solve_tol, max_iters)
        self.gap_tol = gap_tol

    def start(self, sizes, rewards):
        super().start(sizes, rewards)
        self.choices = []
        return self

    def _exploit_choice(self, t):
        st = self.state_
        sol = self._ensure_solution()
        j = self.grid_.snap(st.info)
        m = sol.model
        q = m.rew[j] + np.einsum("ky,ky->k", m.prob[j], sol.bias[self.grid_.succ[j]])
        opt = np.flatnonzero(q.max() - q <= self.gap_tol)
        arm = int(opt[0])
        self.choices.append((t, arm, tuple(int(a) for a in opt)))
        return arm


def step(agent, t: int, env) -> tuple:
    """One decision: choose, query ``env(arm)`` for the observation, update.

    Returns ``(arm, observation, phase)``.
    """
    arm = agent.choose(t)
    obs = env(arm)
    agent.observe(t, arm, obs)
    return arm, obs, agent.phase


def initialize(sizes, rewards, config: ALAConfig, env, fp: bool = False):
    """Create an agent and run the ``K`` initialization plays (arm ``k`` at step ``k``)."""
    agent = (ALAFP if fp else ALA).from_config(config).start(sizes, rewards)
    for k in range(len(sizes)):
        agent.observe_init(k, env(k))
    return agent


# ------------------------------------------------------------ tau0 helper


def bias_variation(solution: AROESolution, probe_horizon: int) -> float:
    """Largest spread of the bias within any aggregate set, over probe members.

    The bias at an off-grid member is one backup from its exact belief:
    ``max_u L(psi, u) - g``.
    """
    part = build_partition(solution, 0.0, probe_horizon=probe_horizon, check_overlaps=False)
    worst = 0.0
    for ps in part.sets:
        if not ps.aggregate:
            continue
        vals = [float(solution.bias[ps.id])]
        for mem in ps.members:
            if any(t is None for _, t in mem):
                continue
            info = InformationState(tuple(s for s, _ in mem), tuple(t for _, t in mem))
            vals.append(float(solution.q_values(info).max() - solution.gain))
        worst = max(worst, max(vals) - min(vals))
    return worst


def select_tau0(instance, T: int, P=None, start: int = 2, max_tau0: int = 64,
                probe_extra: int = 16) -> tuple:
    """Smallest ``tau0`` (doubling from ``start``, then bisecting) whose bias
    varies by less than ``span(h) / (2T)`` inside every aggregate set.

    Returns ``(tau0, variation, threshold, satisfied)``.
    """
    P = instance.transitions if P is None else P

    def check(tau0):
        sol = solve(build_grid(instance.sizes, tau0), P, instance.rewards)
        C = float(sol.bias.max() - sol.bias.min())
        thr = C / (2.0 * T)
        var = bias_variation(sol, tau0 + probe_extra)
        return var < thr or C == 0.0, var, thr

    lo, hi = None, start
    while True:
        ok, var, thr = check(hi)
        if ok:
            break
        lo = hi
        if hi >= max_tau0:
            return hi, var, thr, False
        hi = min(2 * hi, max_tau0)
    if lo is None:
        return hi, var, thr, True
    best = (hi, var, thr)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        ok, v, th = check(mid)
        if ok:
            hi, best = mid, (mid, v, th)
        else:
            lo = mid
    return best[0], best[1], best[2], True


# ---------------------------------------------------------------- baselines


class FixedArm(BaseEstimator):
    """Always play one arm."""

    name = "fixed_arm"

    def __init__(self, arm: int = 0):
        self.arm = arm

    def start(self, sizes, rewards):
        if not 0 <= self.arm < len(sizes):
            raise ConfigError(f"fixed arm {self.arm} out of range")
        self.phase = "exploit"
        return self

    def observe_init(self, k, obs):
        pass

    def choose(self, t):
        return self.arm

    def observe(self, t, arm, obs):
        pass


class RandomPolicy(BaseEstimator):
    """Uniformly random arm, seeded."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def start(self, sizes, rewards):
        self._K = len(sizes)
        self._rng = np.random.default_rng(np.random.SeedSequence(int(self.seed) & (2**64 - 1)))
        self.phase = "exploit"
        return self

    def observe_init(self, k, obs):
        pass

    def choose(self, t):
        return int(self._rng.integers(self._K))

    def observe(self, t, arm, obs):
        pass


class Myopic(BaseEstimator):
    """Greedy in expected immediate reward under the true model."""

    name = "myopic"

    def __init__(self, transitions=None):
        self.transitions = transitions

    def start(self, sizes, rewards):
        if self.transitions is None:
            raise ConfigError("myopic baseline needs the true transition matrices")
        self._P = [np.asarray(p, dtype=float) for p in self.transitions]
        self._r = [np.asarray(r, dtype=float) for r in rewards]
        self._s = [0] * len(sizes)
        self._tau = [0] * len(sizes)
        self._seen = [False] * len(sizes)
        self.phase = "exploit"
        return self

    def observe_init(self, k, obs):
        self.observe(None, k, obs)

    def choose(self, t):
        vals = [np.linalg.matrix_power(P, tau)[s] @ r
                for P, r, s, tau in zip(self._P, self._r, self._s, self._tau)]
        return int(np.argmax(vals))

    def observe(self, t, arm, obs):
        self._tau = [x + 1 for x in self._tau]
        self._s[arm] = obs
        self._tau[arm] = 1
