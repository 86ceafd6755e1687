"""Command line interface: ``urbandit {validate,solve,oracle,run,plot,check}``.

Exit codes: 0 ok, 1 validation error, 2 runtime error, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from pathlib import Path

from .exceptions import ConfigError, URBPError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_ACCEPTANCE = 0, 1, 2, 3

log = logging.getLogger("urbandit")


def _load(args):
    from .experiment import load_config
    return load_config(args.config, seed=args.seed, output_dir=args.out)


def cmd_validate(args):
    cfg = _load(args)
    inst = cfg.build_instance()
    print(f"ok: {inst.K} arms, sizes {list(inst.sizes)}, {len(cfg.algorithms)} algorithms, "
          f"horizons {cfg.horizons}, config {cfg.config_hash[:12]}")
    return EXIT_OK


def cmd_solve(args):
    from .aroe import build_grid, solution_table
    from .policy import solve

    cfg = _load(args)
    inst = cfg.build_instance()
    tau0 = int(cfg.solve.get("tau0", 8))
    sol = solve(build_grid(inst.sizes, tau0), inst.transitions, inst.rewards)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "aroe_solution.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "aggregate", "g", "h"] + [f"delta_{k}" for k in range(inst.K)])
        for row in solution_table(sol):
            w.writerow([row[0], row[1]] + [repr(float(x)) for x in row[2:]])
    print(f"g = {sol.gain:.10f} on {sol.grid.n} grid points (tau0={tau0}, "
          f"{sol.iterations} sweeps); wrote {path}")
    return EXIT_OK


def cmd_oracle(args):
    from .belief import InformationState, initial_tau
    from .oracle import oracle_values

    cfg = _load(args)
    inst = cfg.build_instance()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "oracle_values.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "T", "value"])
        for s in itertools.product(*(range(n) for n in inst.sizes)):
            info = InformationState(s, initial_tau(inst.K))
            for T, v in sorted(oracle_values(inst, None, info, cfg.horizons).items()):
                w.writerow([" ".join(map(str, s)), T, repr(v)])
    print(f"wrote {path}")
    return EXIT_OK


def cmd_run(args):
    from .experiment import run_experiment

    cfg = _load(args)
    man = run_experiment(cfg, workers=args.workers)
    for f in man["failures"]:
        log.error("%s failed: %s", f["algorithm"], f["error"])
    print(f"wrote {len(man['files'])} files to {cfg.output_dir}")
    return EXIT_RUNTIME if man["failures"] else EXIT_OK


def cmd_plot(args):
    from .experiment import plot_manifest

    files = plot_manifest(args.config)
    print("\n".join(str(p) for p in files))
    return EXIT_OK


def cmd_check(args):
    from .acceptance import run_all

    if args.config and Path(args.config).exists():
        _load(args)     # validates the config
    numbers = [int(x) for x in args.criteria.split(",")] if args.criteria else None
    results = run_all(numbers)
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "oracle": cmd_oracle, "run": cmd_run,
            "plot": cmd_plot, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="urbandit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        target = "manifest" if name == "plot" else "config"
        sp.add_argument("config", metavar=target, nargs="?" if name == "check" else None)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        if name == "check":
            sp.add_argument("--criteria", default=None, help="comma-separated criterion numbers")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValidationError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (URBPError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":   # pragma: no cover
    sys.exit(main())
