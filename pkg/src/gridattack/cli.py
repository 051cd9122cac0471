"""Command-line entry point.

    gridattack validate GRID
    gridattack estimate GRID ZFILE [--clean]
    gridattack attack hidden|detect GRID [--algo oracle|sdp|mincut] [--kappa K] [--seed S]
    gridattack verify GRID ATTACKFILE [--noise-seed S]
    gridattack sweep --config CONFIG.json [--out results.csv] [--summary summary.json]

GRID is ``ieee14``, a MATPOWER ``.m`` case or a native JSON grid. Topology-only
sources get flow meters on every line plus angle meters from ``--phasors``.
Exit codes: 0 success, 2 validation error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import attacks, estimator
from .errors import GridAttackError
from .experiments import SweepConfig, emit_csv, run_sweep
from .grid import MeasurementSystem, load_grid_source, place_meters

EXIT_VALIDATION = 2
EXIT_IO = 3


class ValidationFailure(Exception):
    pass


def _load_system(args) -> MeasurementSystem:
    loaded = load_grid_source(args.grid)
    if isinstance(loaded, MeasurementSystem):
        return loaded
    if not args.phasors:
        raise ValidationFailure("grid has no meters; pass --phasors 1,2,... to place angle meters")
    phasors = [int(b) for b in args.phasors.split(",") if b.strip()]
    return place_meters(loaded, phasors, args.sigma)


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationFailure(f"{path}: invalid JSON: {exc}") from None


def _emit(doc, out):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_validate(args):
    system = _load_system(args)
    graph = system.to_graph()
    _emit({
        "buses": system.n,
        "lines": len(system.topology.lines),
        "meters": system.m,
        "rank": int(np.linalg.matrix_rank(system.H)),
        "connected": graph.is_connected(),
        "redundant": system.redundant,
        "protected": list(system.protected),
    }, args.out)


def cmd_estimate(args):
    system = _load_system(args)
    doc = _read_json(args.zfile)
    z = doc["z"] if isinstance(doc, dict) else doc
    if len(z) != system.m:
        raise ValidationFailure(f"z has {len(z)} entries, grid has {system.m} meters")
    result = estimator.wls_estimate(system, z, args.alpha)
    out = {"estimate": result.to_dict()}
    if args.clean and result.detected:
        out["cleanup"] = estimator.identify_and_clean(system, z, args.alpha, args.k_max).to_dict()
    _emit(out, args.out)


def cmd_attack(args):
    system = _load_system(args)
    graph = system.to_graph()
    if args.mode == "hidden":
        outcome = attacks.hidden_attack(graph, args.kappa)
    elif args.algo == "oracle":
        outcome = attacks.detectable_oracle(graph, args.kappa)
    elif args.algo == "sdp":
        outcome = attacks.detectable_sdp(graph, args.kappa, trials=args.trials, seed=args.seed,
                                         restarts=args.restarts)
    else:
        outcome = attacks.detectable_mincut(graph, args.kappa, seed=args.seed)
    if isinstance(outcome, attacks.Verdict):
        _emit({"verdict": outcome.value}, args.out)
    else:
        _emit(outcome.to_dict(system.topology.buses), args.out)


def cmd_verify(args):
    system = _load_system(args)
    attack = attacks.attack_from_dict(_read_json(args.attackfile), system.to_graph())
    x_true = None if args.x_true is None else np.asarray(_read_json(args.x_true), dtype=float)
    report = attacks.verify_end_to_end(system, attack, x_true, args.noise_seed, args.alpha, args.k_max)
    _emit(report.to_dict(), args.out)


def cmd_sweep(args):
    config = SweepConfig.from_dict(_read_json(args.config))
    if args.workers is not None:
        config.workers = args.workers
    result = run_sweep(config)
    emit_csv(result, args.out or "-", timing=args.timing)
    if args.summary:
        _emit({"config": config.to_dict(), "metadata": result.metadata, "points": result.summary()},
              args.summary)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridattack", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def grid_command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("grid")
        p.add_argument("--phasors", help="comma-separated bus ids for angle meters (topology-only grids)")
        p.add_argument("--sigma", type=float, default=0.01, help="meter std for topology-only grids")
        p.add_argument("--out", help="output file (default stdout)")
        p.set_defaults(func=func)
        return p

    grid_command("validate", cmd_validate, "check observability and redundancy")

    p = grid_command("estimate", cmd_estimate, "WLS estimate and bad-data test")
    p.add_argument("zfile")
    p.add_argument("--alpha", type=float, default=estimator.DEFAULT_ALPHA)
    p.add_argument("--k-max", type=int, default=estimator.DEFAULT_K_MAX)
    p.add_argument("--clean", action="store_true", help="run bad-data identification if detected")

    p = sub.add_parser("attack", help="construct a minimum-cardinality attack")
    p.add_argument("mode", choices=["hidden", "detect"])
    p.add_argument("grid")
    p.add_argument("--algo", choices=["oracle", "sdp", "mincut"], default="oracle")
    p.add_argument("--kappa", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=200, help="rounding trials for --algo sdp")
    p.add_argument("--restarts", type=int, default=20, help="solver restarts for --algo sdp")
    p.add_argument("--phasors")
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--out")
    p.set_defaults(func=cmd_attack)

    p = grid_command("verify", cmd_verify, "inject an attack and run the estimator")
    p.add_argument("attackfile")
    p.add_argument("--x-true", help="JSON list with the true state (default zeros)")
    p.add_argument("--noise-seed", type=int, help="add seeded Gaussian noise (default noiseless)")
    p.add_argument("--alpha", type=float, default=estimator.DEFAULT_ALPHA)
    p.add_argument("--k-max", type=int, default=estimator.DEFAULT_K_MAX)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep over protected fractions")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--summary", help="write per-point means and metadata as JSON")
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (GridAttackError, ValidationFailure, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return 0


if __name__ == "__main__":
    sys.exit(main())
