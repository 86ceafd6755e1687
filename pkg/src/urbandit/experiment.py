"""Experiment configs, the run driver, manifests, log fits and plots.

A config is one JSON document::

    {
      "instance": {"generator": "acceptance"}            # or {"arms": [...]}
      "algorithms": [{"name": "ala", "L": 100, "tau0": 8},
                     {"name": "ala", "L_fn": "loglog", "label": "ala_adaptive"},
                     {"name": "ala_fp", "tau0": "auto"},
                     {"name": "fixed_arm:0"}, {"name": "random"}, {"name": "myopic"}],
      "horizons": [500, 1000, 2000],
      "replicates": 5,
      "seed": 0,
      "output_dir": "out",
      "regret_mode": "exact",                            # exact | delta | both
      "solve": {"tau0": 8}                               # grid for `solve` and delta regret
    }
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigError, FitError, NoDataError, URBPError, ValidationError
from .generators import GENERATORS, generate
from .markov import validate_instance
from .policy import ALAConfig, ExplorationSchedule, L_FUNCTIONS, select_tau0, solve
from .simulation import regret_curve, simulate_many

SCHEMA_VERSION = "1"
ALGORITHMS = ("ala", "ala_fp", "random", "myopic")
ALA_KEYS = {"name", "label", "L", "L_fn", "tau0", "index_budget", "tie_break", "resolve_every"}


def code_version() -> str:
    try:
        return metadata.version("urbandit")
    except metadata.PackageNotFoundError:   # pragma: no cover - source checkout
        return "0+unknown"


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class ExperimentConfig:
    instance: dict
    algorithms: list
    horizons: list
    replicates: int = 1
    seed: int = 0
    output_dir: str = "out"
    regret_mode: str = "exact"
    solve: dict = field(default_factory=lambda: {"tau0": 8})
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def modes(self) -> list:
        return ["exact", "delta"] if self.regret_mode == "both" else [self.regret_mode]

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(_canonical(self.to_dict()).encode()).hexdigest()

    def to_dict(self) -> dict:
        return {"instance": self.instance, "algorithms": self.algorithms, "horizons": self.horizons,
                "replicates": self.replicates, "seed": self.seed, "output_dir": self.output_dir,
                "regret_mode": self.regret_mode, "solve": self.solve}

    def build_instance(self):
        desc = self.instance
        if "generator" in desc:
            return generate(desc["generator"], **desc.get("params", {}))
        return validate_instance(desc)

    def labels(self) -> list:
        return [algorithm_label(a) for a in self.algorithms]


def algorithm_label(alg: dict) -> str:
    if "label" in alg:
        return str(alg["label"])
    name = alg["name"]
    if name in ("ala", "ala_fp"):
        sched = f"Lfn-{alg['L_fn']}" if "L_fn" in alg else f"L{alg.get('L', 10):g}"
        return f"{name}_{sched}".replace(":", "-")
    return name.replace(":", "-")


def _check_algorithm(alg, K):
    if not isinstance(alg, dict) or "name" not in alg:
        raise ConfigError(f"algorithm entry must be an object with a 'name': {alg!r}")
    name = alg["name"]
    if name.startswith("fixed_arm"):
        parts = name.split(":")
        if len(parts) != 2 or not parts[1].isdigit() or not 0 <= int(parts[1]) < K:
            raise ConfigError(f"fixed-arm algorithm needs an arm index in 0..{K - 1}: {name!r}")
        return
    if name not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {name!r}")
    if name in ("ala", "ala_fp"):
        extra = set(alg) - ALA_KEYS
        if extra:
            raise ConfigError(f"unknown keys for {name}: {sorted(extra)}")
        if "L" in alg and "L_fn" in alg:
            raise ConfigError("give either L or L_fn, not both")
        if "L_fn" in alg and alg["L_fn"] not in L_FUNCTIONS:
            raise ConfigError(f"unknown L_fn {alg['L_fn']!r}; known: {sorted(L_FUNCTIONS)}")
        if "L" in alg and not (isinstance(alg["L"], (int, float)) and alg["L"] > 0):
            raise ConfigError("L must be a positive number")
        tau0 = alg.get("tau0", 8)
        if not (tau0 == "auto" and name == "ala_fp") and not (isinstance(tau0, int) and tau0 >= 1):
            raise ConfigError(f"tau0 must be a positive integer (or 'auto' for ala_fp), got {tau0!r}")


def load_config(source, *, seed: Optional[int] = None, output_dir: Optional[str] = None) -> ExperimentConfig:
    """Parse and validate a config from a path, JSON text or dict."""
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        text = Path(source).read_text() if os.path.exists(str(source)) else str(source)
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in ("instance", "algorithms", "horizons"):
        if key not in raw:
            raise ConfigError(f"config is missing {key!r}")
    known = {"instance", "algorithms", "horizons", "replicates", "seed", "output_dir",
             "regret_mode", "solve"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    inst = raw["instance"]
    if not isinstance(inst, dict):
        raise ConfigError("instance must be an object")
    if "generator" in inst and inst["generator"] not in GENERATORS:
        raise ConfigError(f"unknown generator {inst['generator']!r}; known: {sorted(GENERATORS)}")
    horizons = raw["horizons"]
    if (not isinstance(horizons, list) or not horizons
            or not all(isinstance(h, int) and h >= 1 for h in horizons)):
        raise ConfigError("horizons must be a non-empty list of positive integers")
    if horizons != sorted(set(horizons)):
        raise ConfigError("horizons must be strictly increasing")
    reps = raw.get("replicates", 1)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError("replicates must be an integer >= 1")
    mode = raw.get("regret_mode", "exact")
    if mode not in ("exact", "delta", "both"):
        raise ConfigError(f"regret_mode must be exact, delta or both, got {mode!r}")
    if not isinstance(raw["algorithms"], list) or not raw["algorithms"]:
        raise ConfigError("algorithms must be a non-empty list")
    cfg = ExperimentConfig(inst, raw["algorithms"], horizons, reps, int(raw.get("seed", 0)),
                           str(raw.get("output_dir", "out")), mode,
                           dict(raw.get("solve", {"tau0": 8})), raw)
    if seed is not None:
        cfg.seed = int(seed)
    if output_dir is not None:
        cfg.output_dir = str(output_dir)
    try:
        instance = cfg.build_instance()
    except ValidationError as e:
        raise ConfigError(f"invalid instance: {e}") from None
    for alg in cfg.algorithms:
        _check_algorithm(alg, instance.K)
    labels = cfg.labels()
    if len(set(labels)) != len(labels):
        raise ConfigError(f"algorithm labels must be unique, got {labels}")
    return cfg


def ala_config(alg: dict, instance, T: int) -> ALAConfig:
    sched = (ExplorationSchedule.adaptive(alg["L_fn"]) if "L_fn" in alg
             else ExplorationSchedule.fixed(alg.get("L", 10.0)))
    tau0 = alg.get("tau0", 8)
    if tau0 == "auto":
        tau0 = select_tau0(instance, T)[0]
    return ALAConfig(schedule=sched, tau0=int(tau0), index_budget=int(alg.get("index_budget", 16)),
                     tie_break=alg.get("tie_break", "first"),
                     resolve_every=int(alg.get("resolve_every", 1)))


# ---------------------------------------------------------------- log fits


@dataclass
class LogFit:
    slope: float
    intercept: float
    r2: float
    ratio: float            # R(T_max) / log(T_max)
    linear_r2: float
    super_log: bool


def _r2(y, yhat):
    ss_res = float(((y - yhat) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    scale = 1e-20 * max(1.0, float((y ** 2).sum()))
    if ss_tot <= scale:
        return 1.0 if ss_res <= scale else 0.0
    return 1.0 - ss_res / ss_tot


def fit_log_curve(T, R) -> LogFit:
    """Least squares ``R = a log T + b``; also fits ``R = c T + d`` and flags
    super-logarithmic growth when the linear model has the smaller residual."""
    T = np.asarray(T, dtype=float)
    R = np.asarray(R, dtype=float)
    if T.size < 4 or T.size != R.size:
        raise FitError("need at least 4 (T, R) points")
    if np.unique(T).size != T.size or np.any(T <= 0):
        raise FitError("T values must be distinct and positive")
    X = np.column_stack([np.log(T), np.ones_like(T)])
    (a, b), *_ = np.linalg.lstsq(X, R, rcond=None)
    Xl = np.column_stack([T, np.ones_like(T)])
    (c, d), *_ = np.linalg.lstsq(Xl, R, rcond=None)
    r2 = _r2(R, X @ [a, b])
    r2l = _r2(R, Xl @ [c, d])
    sse_log = float(((R - X @ [a, b]) ** 2).sum())
    sse_lin = float(((R - Xl @ [c, d]) ** 2).sum())
    if abs(a) < 1e-12 * max(1.0, abs(b)):
        a = 0.0
    return LogFit(float(a), float(b), r2, float(R[np.argmax(T)] / math.log(T.max())), r2l,
                  bool(sse_lin < sse_log and c > 0))


# ------------------------------------------------------------------ runner


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_experiment(config: ExperimentConfig, workers: int = 1) -> dict:
    """Simulate every algorithm, write CSVs, regret tables, manifest and plots.

    Returns the manifest dict (also written to ``output_dir/manifest.json``).
    """
    t0 = time.perf_counter()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    instance = config.build_instance()
    T = config.horizons[-1]
    files = []
    failures = []
    results = {}
    oracle_cache = {}
    solution = None
    if "delta" in config.modes:
        from .aroe import build_grid
        solution = solve(build_grid(instance.sizes, int(config.solve.get("tau0", 8))),
                         instance.transitions, instance.rewards)
    for alg in config.algorithms:
        label = algorithm_label(alg)
        try:
            name = alg["name"]
            params = {"config": ala_config(alg, instance, T)} if name in ("ala", "ala_fp") else {}
            runs = simulate_many(instance, name, params, T, config.replicates, config.seed,
                                 workers=workers)
            for r, run in enumerate(runs):
                p = out / "runs" / label / f"r{r:03d}.csv"
                p.parent.mkdir(parents=True, exist_ok=True)
                run.to_csv(p)
                files.append(p)
            entry = {"explore_steps": [run.phases.count("explore") for run in runs]}
            if params:
                entry["tau0"] = params["config"].tau0
            if name == "ala_fp":
                entry["fp_choices"] = sum(len(run.extra.get("fp_choices", [])) for run in runs)
            for mode in config.modes:
                rep = regret_curve(runs, instance, config.horizons, mode, solution=solution,
                                   oracle_cache=oracle_cache)
                p = out / "regret" / f"{label}_{mode}.csv"
                p.parent.mkdir(parents=True, exist_ok=True)
                rep.to_csv(p)
                files.append(p)
                m = {"T": rep.horizons, "regret": rep.regret.tolist(), "stderr": rep.stderr.tolist()}
                if len(rep.horizons) >= 4:
                    f = fit_log_curve(rep.horizons, rep.regret)
                    m["fit"] = {"slope": f.slope, "intercept": f.intercept, "r2": f.r2,
                                "ratio": f.ratio, "super_log": f.super_log}
                entry[mode] = m
            results[label] = entry
        except URBPError as e:
            failures.append({"algorithm": label, "error": f"{type(e).__name__}: {e}"})
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "csv_schemas": {"run": "t,arm,observation,reward,phase",
                        "regret": "T,regret,mode,stderr,n_replicates"},
        "config": config.to_dict(),
        "config_hash": config.config_hash,
        "code_version": code_version(),
        "results": results,
        "failures": failures,
        "acceptance": {},
        "files": {},
    }
    if results:
        files.extend(emit_plots(manifest, out))
    manifest["files"] = {str(p.relative_to(out)): sha256_file(p) for p in sorted(files)}
    manifest["wall_clock_seconds"] = round(time.perf_counter() - t0, 3)
    write_manifest(manifest, out / "manifest.json")
    return manifest


def write_manifest(manifest: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def verify_manifest(path) -> list:
    """Files whose content no longer matches the recorded hash (or are missing)."""
    path = Path(path)
    man = load_manifest(path)
    bad = []
    for rel, digest in man["files"].items():
        p = path.parent / rel
        if not p.exists() or sha256_file(p) != digest:
            bad.append(rel)
    return bad


# ------------------------------------------------------------------- plots


def emit_plots(manifest: dict, out_dir) -> list:
    """One SVG per regret mode: regret against ``T`` on linear and log x axes.

    Output is byte-identical for identical data (fixed hash salt, no date).
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    results = manifest.get("results") or {}
    modes = sorted({m for entry in results.values() for m in ("exact", "delta") if m in entry})
    if not modes:
        raise NoDataError("manifest holds no completed runs")
    out_dir = Path(out_dir)
    (out_dir / "plots").mkdir(parents=True, exist_ok=True)
    written = []
    with matplotlib.rc_context({"svg.hashsalt": "urbandit", "svg.fonttype": "none",
                                "path.simplify": False}):
        for mode in modes:
            fig, axes = plt.subplots(1, 2, figsize=(10, 4))
            for ax, logx in zip(axes, (False, True)):
                for label in sorted(results):
                    m = results[label].get(mode)
                    if not m:
                        continue
                    T = np.asarray(m["T"], dtype=float)
                    R = np.asarray(m["regret"])
                    se = np.asarray(m["stderr"])
                    ax.plot(T, R, marker="o", label=label)
                    ax.fill_between(T, R - se, R + se, alpha=0.2)
                if logx:
                    ax.set_xscale("log")
                ax.set_xlabel("T")
                ax.set_ylabel(f"regret ({mode})")
                ax.set_title("log x" if logx else "linear x")
                ax.legend()
            fig.tight_layout()
            p = out_dir / "plots" / f"regret_{mode}.svg"
            fig.savefig(p, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(p)
    return written


def plot_manifest(path) -> list:
    path = Path(path)
    man = load_manifest(path)
    files = emit_plots(man, path.parent)
    for p in files:
        man["files"][str(p.relative_to(path.parent))] = sha256_file(p)
    write_manifest(man, path)
    return files
