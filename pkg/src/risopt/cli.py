"""Command-line front end: ``risopt {solve-slot,episode,sweep,validate}``.

Exit codes: 0 success, 1 configuration error, 2 infeasible slot, 3 failed validation.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import benders, milp
from .physics import BatteryState
from .scenario import ConfigError, ScenarioConfig, load_config, parse_value, sample_channels
from .sim import (SOLVERS, apply_params, csv_writer, run_episode, run_sweep, solve_slot,
                  write_sweep_csv)
from .validation import run_validation

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_VALIDATION = 0, 1, 2, 3

SLOT_COLUMNS = ("feasible", "active_elements", "elements_u1", "elements_u2", "p1", "p2",
                "rate1", "rate2", "e_ris", "e_users", "objective", "choices")


def _split_kv(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def _grid_value(key: str, text: str):
    if key == "solver":
        if text not in SOLVERS:
            raise ConfigError(f"unknown solver {text!r}")
        return text
    if key in ("ris_x", "ris_y"):
        return float(text)
    return parse_value({"n": "n_elements", "N": "n_elements"}.get(key, key), text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value scenario file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
    common.add_argument("--solver", choices=SOLVERS, default="exact")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="CSV output path (default: stdout)")

    parser = argparse.ArgumentParser(prog="risopt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    slot = sub.add_parser("solve-slot", parents=[common], help="solve one slot")
    slot.add_argument("--battery", type=float, help="stored energy before the slot (J)")
    slot.add_argument("--theta", type=float, default=0.0, help="solar arrival (W)")
    slot.add_argument("--dump-lp", metavar="PATH", help="write the linearized program (LP format)")
    slot.add_argument("--trace", metavar="PATH", help="write the decomposition trace CSV")
    sub.add_parser("episode", parents=[common], help="run one episode, one CSV row per slot")
    sweep = sub.add_parser("sweep", parents=[common], help="grid sweep, one CSV row per point")
    sweep.add_argument("--param", action="append", default=[], metavar="KEY=V1,V2,...")
    sweep.add_argument("--scenarios", type=int, default=1)
    sweep.add_argument("--workers", type=int, help="process count (capped by RIS_OPT_THREADS)")
    val = sub.add_parser("validate", help="oracle cross-checks on random small instances")
    val.add_argument("--n", type=int, default=6, help="largest surface size")
    val.add_argument("--instances", type=int, default=50)
    val.add_argument("--seed", type=int, default=0)
    return parser


def load_run_config(args) -> ScenarioConfig:
    config = load_config(args.config) if args.config else ScenarioConfig()
    changes = {}
    for item in args.set:
        key, value = _split_kv(item)
        changes[key] = parse_value(key, value)
    if args.seed is not None:
        changes["seed"] = args.seed
    try:
        return config.replace(**changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def cmd_solve_slot(args, config: ScenarioConfig) -> int:
    rng = np.random.default_rng(config.seed)
    channels = sample_channels(config, rng)
    battery = BatteryState(config.initial_stored if args.battery is None else args.battery)
    if args.dump_lp:
        with open(args.dump_lp, "w") as fh:
            fh.write(milp.build_program(channels, battery, args.theta, config).to_lp())
    if args.solver == "benders" and args.trace:
        outcome, trace = benders.benders_iterate(channels, battery, args.theta, config)
        trace.write_csv(args.trace)
    else:
        outcome = solve_slot(channels, battery, args.theta, config, args.solver)
    u1, u2 = outcome.assignment.counts()
    with csv_writer(args.out or sys.stdout) as writer:
        writer.writerow(SLOT_COLUMNS)
        writer.writerow([int(outcome.feasible), outcome.assignment.active, u1, u2,
                         repr(outcome.power[0]), repr(outcome.power[1]), repr(outcome.rates[0]),
                         repr(outcome.rates[1]), repr(outcome.e_ris), repr(sum(outcome.e_users)),
                         repr(outcome.objective),
                         " ".join(str(c) for c in outcome.assignment.choices())])
    if not outcome.feasible:
        print("infeasible: " + "; ".join(outcome.violations), file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_episode(args, config: ScenarioConfig) -> int:
    result = run_episode(config, args.solver, config.seed)
    result.write_csv(args.out or sys.stdout)
    print(f"e_users_total={result.e_users_total:.6g} J e_ris_total={result.e_ris_total:.6g} J "
          f"infeasible_slots={result.infeasible_slots}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args, config: ScenarioConfig) -> int:
    grid = {}
    for item in args.param:
        key, values = _split_kv(item)
        if key in grid:
            raise ConfigError(f"duplicate sweep parameter {key!r}")
        grid[key] = [_grid_value(key, v) for v in values.split(",") if v.strip()]
        if not grid[key]:
            raise ConfigError(f"empty value list for {key!r}")
    try:
        apply_params(config, {k: v[0] for k, v in grid.items()})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.scenarios < 1:
        raise ConfigError("--scenarios must be >= 1")
    points = run_sweep(config, grid, args.scenarios, args.solver, args.workers)
    write_sweep_csv(points, args.out or sys.stdout)
    return EXIT_OK


def cmd_validate(args) -> int:
    report = run_validation(args.n, args.instances, args.seed)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_VALIDATION


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        config = load_run_config(args)
        handler = {"solve-slot": cmd_solve_slot, "episode": cmd_episode, "sweep": cmd_sweep}
        return handler[args.command](args, config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
