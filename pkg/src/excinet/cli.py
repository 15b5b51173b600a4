"""Command-line frontend.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 optimizer divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from .config import ConfigError, RunConfig, dump_config, load_config
from .io import sha256_file, write_csv, write_json_atomic
from .liouville import NumericalError, basis_state, liouvillian, propagate_trajectory, trajectory_rows
from .network import SpecError
from .optimize import OptimizerDivergence, rmsprop_minimize

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_DIVERGENCE = 4

EXPERIMENTS = (
    "calibrate",
    "table1",
    "sweep",
    "compare-ref",
    "resil-init",
    "resil-sink",
    "dual-sink",
    "random-couplings",
    "shrink",
    "coherence",
)
CONDITION_ALIASES = {"ref": "gamma_ref", "gamma_ref": "gamma_ref", "one": "one", "zero": "zero"}

log = logging.getLogger("excinet")


class InputError(Exception):
    pass


def _dephasing(value: str):
    if value in CONDITION_ALIASES:
        return CONDITION_ALIASES[value]
    try:
        gamma = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ref, one, zero or a rate, got {value!r}") from None
    if not np.isfinite(gamma) or gamma < 0:
        raise argparse.ArgumentTypeError("a dephasing rate must be finite and nonnegative")
    return gamma


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    spec = cfg.network
    if getattr(args, "dephasing", None) is not None:
        spec = spec.replace(dephasing_rates=ex.dephasing_vector(spec, args.dephasing))
    optimizer = cfg.optimizer or ex.DEFAULT_OPTIMIZER
    overrides = {}
    if getattr(args, "iters", None) is not None:
        overrides["max_iters"] = args.iters
    if getattr(args, "lr", None) is not None:
        overrides["learning_rate"] = args.lr
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        try:
            optimizer = replace(optimizer, **overrides)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
    return RunConfig(network=spec, optimizer=optimizer, chain=cfg.chain, source=cfg.source)


def _finish(args, cfg: RunConfig, out: Path, paths, started: float, extra=None) -> None:
    manifest = {
        "command": args.command,
        "argv": args.argv,
        "config": cfg.source,
        "resolved": dump_config(cfg),
        "seed": cfg.optimizer.seed if cfg.optimizer else None,
        "output_dir": str(out),
        "artifacts": {p.name: sha256_file(p) for p in paths},
        "duration_s": time.perf_counter() - started,
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    write_json_atomic(out / "manifest.json", manifest)


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    cfg = _resolve(args)
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    if args.time < 0:
        raise InputError("--time must be nonnegative")
    spec = cfg.network
    times = np.linspace(0.0, args.time, args.samples) if args.time > 0 else np.array([0.0])
    states = propagate_trajectory(liouvillian(spec), basis_state(spec.dim, spec.initial_index), times, method=args.method)
    out = Path(args.out)
    path = write_csv(out / "trajectory.csv", trajectory_rows(spec, times, states))
    _finish(args, cfg, out, [path], started, {"time": args.time, "method": args.method})
    print(f"r_s({args.time:g}) = {states[-1].data[-1].real:.6f}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    started = time.perf_counter()
    cfg = _resolve(args)
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    if args.time <= 0:
        raise InputError("--time must be positive")
    result = rmsprop_minimize(cfg.network, args.time, cfg.optimizer)
    out = Path(args.out)
    h_row = {f"h{k + 1}": float(x) for k, x in enumerate(result.h_opt)}
    paths = [
        write_csv(out / "h_opt.csv", [h_row]),
        write_csv(out / "learning_curve.csv", [{"iteration": i, "r_s": r} for i, r in result.learning_curve]),
    ]
    _finish(args, cfg, out, paths, started, {"time": args.time, "final_cost": result.final_cost})
    print(f"r_s({args.time:g}) = {result.r_s:.6f} after {len(result.learning_curve)} iterations")
    return EXIT_OK


def _conditions(args) -> list[str]:
    return [args.condition] if args.condition else list(ex.CONDITIONS)


def _run_experiment(args, cfg: RunConfig) -> list[ex.ExperimentReport]:
    spec = cfg.network
    T = args.time
    name = args.name
    opt = cfg.optimizer
    if name == "calibrate":
        return [ex.calibrate_hbar(spec, T=T)]
    if name == "table1":
        return [ex.table1(spec, T=T, config=opt)]
    if name == "sweep":
        gammas = np.linspace(0.0, 20.0, args.samples or len(ex.SWEEP_GAMMAS))
        return [ex.dephasing_sweep(spec, gammas=gammas, T=T, config=opt)]
    if name == "shrink":
        reports = []
        for cond in _conditions(args):
            rep = ex.node_removal_study(spec, ex.dephasing_vector(spec, cond), T=T, config=opt)
            reports.append(_renamed(rep, cond))
        return reports

    t1 = ex.table1(spec, T=5.0 if name == "coherence" else T, config=opt)
    h_opt = ex.optimal_energies(t1)
    reports = [t1]
    if name == "compare-ref":
        if "gamma_ref" not in h_opt:
            raise OptimizerDivergence("optimization under gamma_ref failed")
        return reports + [ex.compare_reference(spec, h_opt["gamma_ref"], T=T, n_samples=args.samples or ex.TRAJECTORY_SAMPLES)]
    if name == "coherence":
        chosen = {c: h_opt[c] for c in _conditions(args) if c in h_opt}
        if not chosen:
            raise OptimizerDivergence("every optimization failed")
        return reports + [
            ex.coherence_study(spec, chosen, chain=cfg.chain, T=T, n_samples=args.samples or ex.TRAJECTORY_SAMPLES)
        ]

    for cond in _conditions(args):
        if cond not in h_opt:
            log.warning("skipping %s: optimization failed", cond)
            continue
        gammas = ex.dephasing_vector(spec, cond)
        if name == "resil-init":
            rep = ex.resilience_initial_sites(spec, h_opt[cond], gammas, T=T)
        elif name == "resil-sink":
            rep = ex.resilience_sink_sites(spec, h_opt[cond], gammas, T=T)
        elif name == "dual-sink":
            rep = ex.dual_sink(spec, h_opt[cond], gammas, sink_pair=tuple(args.sink_pair), T=T)
        elif name == "random-couplings":
            rep = ex.random_coupling_study(
                spec, h_opt[cond], gammas, n_samples=args.samples or 1000, seed=args.seed, T=T
            )
        else:
            raise InputError(f"unknown experiment {name!r}")
        reports.append(_renamed(rep, cond))
    return reports


def _renamed(rep: ex.ExperimentReport, cond: str) -> ex.ExperimentReport:
    rep.name = f"{rep.name}_{cond}"
    rep.params["condition"] = cond
    for child in rep.children:
        child.name = f"{child.name}_{cond}"
    return rep


def _all_failed(reports) -> bool:
    rows = [row for rep in reports for row in rep.rows if "status" in row]
    return bool(rows) and all(row["status"] != "ok" for row in rows)


def cmd_experiment(args) -> int:
    started = time.perf_counter()
    cfg = _resolve(args)
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    if args.time is None:
        args.time = 10.0 if args.name == "coherence" else 5.0
    if args.time <= 0:
        raise InputError("--time must be positive")
    reports = _run_experiment(args, cfg)
    out = Path(args.out)
    paths = [p for rep in reports for p in rep.write(out)]
    summaries = {rep.name: rep.summary for rep in reports if rep.summary}
    _finish(args, cfg, out, paths, started, {"experiment": args.name, "summaries": summaries, "time": args.time})
    for p in paths:
        print(p)
    return EXIT_NUMERICAL if _all_failed(reports) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="excinet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"excinet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_time):
        p.add_argument("config", nargs="?", default="fmo7", help="config file, or 'fmo7' for the bundled reference")
        p.add_argument("--time", type=float, default=default_time, help="evolution time T in ps")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--dephasing", type=_dephasing, help="ref, one, zero or a uniform rate; overrides the config")
        p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")

    p = sub.add_parser("simulate", help="propagate the initial excitation and write trajectory.csv")
    common(p, 5.0)
    p.add_argument("--method", choices=("auto", "expm", "ode"), default="auto")
    p.add_argument("--samples", type=int, default=ex.TRAJECTORY_SAMPLES, help="number of time samples")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", help="optimize the site energies with RMSprop")
    common(p, 5.0)
    p.add_argument("--iters", type=int, help="maximum number of iterations")
    p.add_argument("--lr", type=float, help="learning rate")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("experiment", help="run one of the reproduction studies")
    p.add_argument("name", choices=EXPERIMENTS)
    common(p, None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, help="draws, grid points or time samples, depending on the study")
    p.add_argument("--iters", type=int, help="optimizer iteration budget")
    p.add_argument("--condition", choices=tuple(ex.CONDITIONS), help="restrict to one dephasing condition")
    p.add_argument("--sink-pair", type=int, nargs=2, default=(3, 7), metavar=("M1", "M2"))
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpecError, InputError) as exc:
        print(f"excinet: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OptimizerDivergence as exc:
        print(f"excinet: optimizer diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except NumericalError as exc:
        print(f"excinet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
