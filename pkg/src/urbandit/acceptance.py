"""Executable acceptance checks, shared by the ``check`` command and the test suite.

Each ``criterion_N`` returns a :class:`CriterionResult`. Simulation-heavy
checks share replicate runs through a module-level cache, so running 4, 5
and 6 in one process simulates the fixed-L ALA runs once.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aroe import build_grid, check_finite_horizon_sandwich, value_iterate
from .belief import InformationState, belief_of, initial_tau
from .bruteforce import brute_force_value
from .estimation import concentration_report
from .experiment import fit_log_curve, load_config, run_experiment
from .generators import acceptance_instance, dense
from .markov import ergodicity_certificate, product_difference_bound
from .oracle import finite_horizon_oracle
from .policy import ALAConfig, ExplorationSchedule, select_tau0
from .simulation import arm_paths, exploration_envelope, regret_curve, simulate_many


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    data: dict = field(default_factory=dict, repr=False)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number}: {self.name} -- {self.detail} ({self.seconds:.1f}s)"


def _timed(number, name, fn):
    t0 = time.perf_counter()
    passed, detail, data = fn()
    return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - t0, data)


# ---------------------------------------------------------------- 1

def criterion_1(n_instances: int = 20, T: int = 6, seed: int = 1, time_limit: float = 60.0):
    def run():
        t0 = time.perf_counter()
        rng = np.random.default_rng(seed)
        worst = 0.0
        for i in range(n_instances):
            inst = dense(2, 2, seed=int(rng.integers(2**31)), low=0.05, high=0.95)
            info = InformationState(tuple(int(x) for x in rng.integers(0, 2, 2)), initial_tau(2))
            a = finite_horizon_oracle(inst, None, info, T).value
            b = brute_force_value(inst.transitions, inst.rewards, info, T)
            worst = max(worst, abs(a - b))
        el = time.perf_counter() - t0
        return (worst <= 1e-9 and el < time_limit,
                f"max |oracle - brute force| = {worst:.2e} over {n_instances} instances, {el:.1f}s",
                {"max_error": worst, "elapsed": el})
    return _timed(1, "oracle equals policy-tree enumeration", run)


# ---------------------------------------------------------------- 2

def greedy_average_reward(solution, instance, steps: int, env_seed: int) -> float:
    """Average reward of the grid-greedy policy over ``steps`` simulated steps."""
    grid = solution.grid
    greedy = np.argmax(solution.q_grid(), axis=1).tolist()
    succ = grid.succ.tolist()
    K = instance.K
    paths = arm_paths(instance, K + steps, env_seed)
    rew = [list(map(float, r)) for r in instance.rewards]
    j = grid.snap(InformationState(tuple(paths[k][k] for k in range(K)), initial_tau(K)))
    total = 0.0
    for n in range(K, K + steps):
        u = greedy[j]
        y = paths[u][n]
        total += rew[u][y]
        j = succ[j][u][y]
    return total / steps


def criterion_2(steps: int = 10**6, seed: int = 2, tau0: int = 16, tol: float = 0.01,
                time_limit: float = 300.0):
    shapes = [(1, 2), (1, 3), (2, 2), (2, 2), (2, 3), (2, (2, 3)), (2, 2), (2, 3), (1, 3), (2, 2)]

    def run():
        t0 = time.perf_counter()
        rows = []
        for i, (K, S) in enumerate(shapes):
            inst = dense(K, S, seed=seed * 100 + i, low=0.1, high=0.9)
            sol = value_iterate(build_grid(inst.sizes, tau0), inst.transitions, inst.rewards)
            avg = greedy_average_reward(sol, inst, steps, env_seed=seed * 1000 + i)
            rows.append((K, S, sol.gain, avg, abs(sol.gain - avg)))
        el = time.perf_counter() - t0
        worst = max(r[4] for r in rows)
        return (worst <= tol and el < time_limit,
                f"max |g - simulated average| = {worst:.4f} over {len(rows)} instances, {el:.1f}s",
                {"rows": rows, "elapsed": el})
    return _timed(2, "AROE gain matches simulated greedy average", run)


# ---------------------------------------------------------------- 3

def criterion_3(n_instances: int = 5, T: int = 8, seed: int = 3, tau0: int = 40, slack: float = 1e-6):
    def run():
        viol = 0
        margins = []
        for i in range(n_instances):
            S = 2 if i < 3 else 3
            inst = dense(2, S, seed=seed * 100 + i, low=0.1, high=0.9)
            sol = value_iterate(build_grid(inst.sizes, tau0), inst.transitions, inst.rewards,
                                tol=1e-12)
            rep = check_finite_horizon_sandwich(sol, T, slack=slack)
            viol += len(rep["violations"])
            margins.append(min(rep["min_lower_margin"], rep["min_upper_margin"]))
        return (viol == 0, f"{viol} violations; smallest margin {min(margins):.2e}",
                {"violations": viol, "margins": margins})
    return _timed(3, "finite-horizon sandwich at every grid point", run)


# ------------------------------------------------------------ 4-6 shared

HORIZONS = [500, 1000, 2000, 4000, 8000]
_RUNS: dict = {}


def acceptance_runs(key: str, replicates: int = 50, seed: int = 4):
    """Cached replicate runs on the acceptance instance."""
    ck = (key, replicates, seed)
    if ck not in _RUNS:
        inst = acceptance_instance()
        if key == "fixed":
            cfg = ALAConfig(schedule=ExplorationSchedule.fixed(100.0), tau0=8)
            _RUNS[ck] = simulate_many(inst, "ala", cfg, HORIZONS[-1], replicates, seed)
        elif key == "adaptive":
            cfg = ALAConfig(schedule=ExplorationSchedule.adaptive("loglog"), tau0=8)
            _RUNS[ck] = simulate_many(inst, "ala", cfg, HORIZONS[-1], replicates, seed)
        elif key == "fp":
            tau0, var, thr, ok = select_tau0(inst, 4000)
            cfg = ALAConfig(schedule=ExplorationSchedule.fixed(100.0), tau0=tau0)
            runs = simulate_many(inst, "ala_fp", cfg, 4000, replicates, seed)
            _RUNS[ck] = (runs, {"tau0": tau0, "variation": var, "threshold": thr, "satisfied": ok})
        else:
            raise KeyError(key)
    return _RUNS[ck]


_ORACLE: dict = {}


def criterion_4(replicates: int = 50, seed: int = 4, time_limit: float = 1200.0):
    def run():
        t0 = time.perf_counter()
        inst = acceptance_instance()
        runs = acceptance_runs("fixed", replicates, seed)
        rep = regret_curve(runs, inst, HORIZONS, "exact", oracle_cache=_ORACLE)
        fit = fit_log_curve(rep.horizons, rep.regret)
        R = dict(zip(rep.horizons, rep.regret))
        ratio = R[8000] / R[1000]
        limit = 1.6 * math.log(8000) / math.log(1000)
        el = time.perf_counter() - t0
        passed = fit.r2 >= 0.9 and ratio <= limit and el < time_limit
        curve = ", ".join(f"R({T})={r:.1f}" for T, r in R.items())
        return (passed, f"r2={fit.r2:.3f}, R(8000)/R(1000)={ratio:.3f} (limit {limit:.3f}); {curve}; "
                        f"{el:.0f}s", {"regret": R, "stderr": rep.stderr.tolist(), "r2": fit.r2,
                                       "ratio": ratio, "elapsed": el})
    return _timed(4, "logarithmic regret shape, fixed L = 100", run)


def criterion_5(replicates: int = 50, seed: int = 4):
    def run():
        inst = acceptance_instance()
        fixed = regret_curve(acceptance_runs("fixed", replicates, seed), inst, [8000], "exact",
                             oracle_cache=_ORACLE)
        runs = acceptance_runs("adaptive", replicates, seed)
        adapt = regret_curve(runs, inst, [8000], "exact", oracle_cache=_ORACLE)
        cert = ergodicity_certificate(inst)
        sched = ExplorationSchedule.adaptive("loglog")
        env = exploration_envelope(inst, sched, 8000, cert.T_max)
        explore = [r.phases.count("explore") for r in runs]
        ra, rf = float(adapt.regret[0]), float(fixed.regret[0])
        passed = ra <= 3 * rf and max(explore) <= env
        return (passed, f"R_adaptive(8000)={ra:.1f} vs 3 x R_fixed={3 * rf:.1f}; "
                        f"max exploration {max(explore)} <= envelope {env:.0f}",
                {"adaptive": ra, "fixed": rf, "explore": explore, "envelope": env})
    return _timed(5, "adaptive exploration schedule", run)


def criterion_6(replicates: int = 50, seed: int = 4):
    def run():
        inst = acceptance_instance()
        runs, info = acceptance_runs("fp", replicates, seed)
        fp = regret_curve(runs, inst, [4000], "exact", oracle_cache=_ORACLE)
        ala = regret_curve(acceptance_runs("fixed", replicates, seed), inst, [4000], "exact",
                           oracle_cache=_ORACLE)
        violations = sum(1 for r in runs for (_, arm, opt) in r.extra["fp_choices"] if arm not in opt)
        n_choices = sum(len(r.extra["fp_choices"]) for r in runs)
        rf, ra = float(fp.regret[0]), float(ala.regret[0])
        passed = rf <= 2 * ra and violations == 0
        return (passed, f"tau0={info['tau0']}; R_fp(4000)={rf:.1f} vs 2 x R_ala={2 * ra:.1f}; "
                        f"{violations} violations in {n_choices} exploit choices",
                {"fp": rf, "ala": ra, "violations": violations, **info})
    return _timed(6, "finite-partition variant", run)


# ---------------------------------------------------------------- 7

def criterion_7(replicates: int = 200, horizon: int = 10**4, epsilon: float = 0.1, seed: int = 7,
                **kw):
    def run():
        L = 3.0 / (2.0 * epsilon ** 2)
        rep = concentration_report(acceptance_instance(), L, epsilon, horizon, replicates, seed, **kw)
        frac = rep.fraction_below()
        rows = "; ".join(f"[{lo},{hi}] raw {a:.1e}/{ea:.1e} norm {b:.1e}/{eb:.1e}"
                         for lo, hi, _, a, ea, b, eb in rep.rows())
        return frac >= 0.95, f"{frac:.0%} of buckets below envelope; {rows}", {"fraction": frac}
    return _timed(7, "estimate concentration", run)


# ---------------------------------------------------------------- 8

def criterion_8(trials: int = 10**5, seed: int = 8):
    def run():
        rng = np.random.default_rng(seed)
        bad_prod = 0
        for _ in range(trials):
            K = int(rng.integers(1, 7))
            lhs, rhs = product_difference_bound(rng.random(K), rng.random(K))
            bad_prod += lhs > rhs
        bad_belief = 0
        cache = {}
        for i in range(trials):
            if i % 100 == 0:
                K = int(rng.integers(1, 4))
                sizes = [int(n) for n in rng.integers(2, 4, K)]
                inst = dense(K, sizes, seed=int(rng.integers(2**31)), low=0.05, high=1.0)
                cert = ergodicity_certificate(inst)
                cache = {"inst": inst, "C1": cert.C1}
            inst = cache["inst"]
            P = inst.transitions
            scale = 10 ** rng.uniform(-4, 0)
            Phat = []
            for Pk in P:
                Q = rng.dirichlet(np.ones(Pk.shape[0]), size=Pk.shape[0])
                Phat.append((1 - scale) * Pk + scale * Q)
            info = InformationState(tuple(int(rng.integers(n)) for n in inst.sizes),
                                    tuple(int(t) for t in rng.integers(1, 40, inst.K)))
            lhs = np.abs(belief_of(info, P).joint() - belief_of(info, Phat).joint()).sum()
            rhs = (np.prod(inst.sizes) * cache["C1"]
                   * sum(np.abs(a - b).sum(axis=1).max() for a, b in zip(Phat, P)))
            bad_belief += lhs > rhs
        return (bad_prod == 0 and bad_belief == 0,
                f"{bad_prod} product-bound and {bad_belief} belief-perturbation violations "
                f"in {trials} trials each", {"product": bad_prod, "belief": bad_belief})
    return _timed(8, "product and belief perturbation bounds", run)


# ---------------------------------------------------------------- 9

ACCEPTANCE_CONFIG = {
    "instance": {"generator": "acceptance"},
    "algorithms": [{"name": "ala", "L": 10, "tau0": 4, "index_budget": 8},
                   {"name": "ala_fp", "L": 10, "tau0": 4},
                   {"name": "fixed_arm:0"}, {"name": "random"}, {"name": "myopic"}],
    "horizons": [50, 100, 200, 400],
    "replicates": 2,
    "seed": 9,
    "regret_mode": "both",
    "solve": {"tau0": 8},
}


def criterion_9(config=None):
    def run():
        cfg_raw = dict(config or ACCEPTANCE_CONFIG)
        with tempfile.TemporaryDirectory() as tmp:
            mans = []
            for name in ("a", "b"):
                cfg = load_config(cfg_raw, output_dir=str(Path(tmp) / name))
                mans.append(run_experiment(cfg))
            fa, fb = mans[0]["files"], mans[1]["files"]
            same = fa == fb and all((Path(tmp) / "a" / p).read_bytes() == (Path(tmp) / "b" / p).read_bytes()
                                    for p in fa)
            n_csv = sum(p.endswith(".csv") for p in fa)
            n_svg = sum(p.endswith(".svg") for p in fa)
        return same, f"{n_csv} CSV and {n_svg} SVG files {'identical' if same else 'differ'}", {}
    return _timed(9, "byte-identical reruns", run)


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}


def run_all(numbers=None, echo=print) -> list:
    out = []
    for n in sorted(numbers or CRITERIA):
        res = CRITERIA[n]()
        if echo:
            echo(res.line())
        out.append(res)
    return out
