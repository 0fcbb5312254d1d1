"""Time-slotted episodes and parameter sweeps.

Each slot draws a solar arrival, solves the slot problem against the battery
level left by the previous slot, and propagates the battery. Harvest that
would overflow the battery is curtailed before the slot is solved, so the
capacity gate of the slot problem never rejects a slot only because the
battery is full.
"""

from __future__ import annotations

import dataclasses
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import benders, milp
from .benders import csv_writer
from .physics import (
    BatteryState,
    PowerAllocation,
    SlotOutcome,
    battery_update,
    evaluate_slot,
    infeasible_outcome,
    minimal_power,
    other,
)
from .scenario import ChannelRealization, ScenarioConfig, sample_channels, sample_energy_arrival

SOLVERS = ("exact", "benders")
THREADS_ENV = "RIS_OPT_THREADS"

EPISODE_COLUMNS = ("slot", "theta", "battery_before", "battery_after", "active_elements",
                   "elements_u1", "elements_u2", "p1", "p2", "rate1", "rate2",
                   "e_ris", "e_users", "objective", "feasible")
SWEEP_METRICS = ("e_users_mean", "e_ris_mean", "objective_mean", "elements_mean",
                 "infeasible_rate", "scenarios")


def solve_slot(channels: ChannelRealization, battery_before: BatteryState, theta: float,
               config: ScenarioConfig, solver: str = "exact") -> SlotOutcome:
    """Solve one slot and return its scored outcome (never raises on infeasibility)."""
    if solver == "exact":
        report = milp.solve_exact(milp.build_program(channels, battery_before, theta, config))
        if not report.optimal:
            return infeasible_outcome(channels, battery_before, theta, config)
        # The program's rate rows hold in SNR units; re-derive each power from the
        # closed form so the log-domain rate check also passes bit for bit.
        powers = [minimal_power(other(j), report.assignment, channels, config) for j in (0, 1)]
        if any(p is None for p in powers):
            return infeasible_outcome(channels, battery_before, theta, config)
        return evaluate_slot(report.assignment, PowerAllocation(tuple(powers)), battery_before,
                             theta, channels, config)
    if solver == "benders":
        outcome, _ = benders.benders_iterate(channels, battery_before, theta, config)
        return outcome
    raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")


@dataclass
class EpisodeResult:
    outcomes: list[SlotOutcome]
    thetas: list[float]
    battery: list[float]  # battery[0] is the initial level, battery[t] the level after slot t

    @property
    def e_users_total(self) -> float:
        return float(sum(sum(o.e_users) for o in self.outcomes))

    @property
    def e_ris_total(self) -> float:
        return float(sum(o.e_ris for o in self.outcomes))

    @property
    def objective_total(self) -> float:
        return float(sum(o.objective for o in self.outcomes))

    @property
    def mean_active(self) -> float:
        return float(np.mean([o.assignment.active for o in self.outcomes]))

    @property
    def infeasible_slots(self) -> int:
        return sum(not o.feasible for o in self.outcomes)

    def write_csv(self, target) -> None:
        with csv_writer(target) as writer:
            writer.writerow(EPISODE_COLUMNS)
            for t, o in enumerate(self.outcomes):
                u1, u2 = o.assignment.counts()
                writer.writerow([t + 1, repr(self.thetas[t]), repr(self.battery[t]),
                                 repr(self.battery[t + 1]), o.assignment.active, u1, u2,
                                 repr(o.power[0]), repr(o.power[1]), repr(o.rates[0]),
                                 repr(o.rates[1]), repr(o.e_ris), repr(sum(o.e_users)),
                                 repr(o.objective), int(o.feasible)])


class _SlotCache:
    """Memoises slot decisions; the decision depends on theta only through the capacity gate,
    which curtailment keeps satisfied, so the key omits theta."""

    def __init__(self):
        self._store = {}

    def solve(self, channels, battery_before, theta, config, solver) -> SlotOutcome:
        key = (solver, config, channels.key(), battery_before.stored)
        hit = self._store.get(key)
        if hit is None:
            out = solve_slot(channels, battery_before, theta, config, solver)
            self._store[key] = (out.assignment, out.power)
            return out
        assignment, power = hit
        return evaluate_slot(assignment, power, battery_before, theta, channels, config)


def curtailed_arrival(theta: float, battery_before: BatteryState, config: ScenarioConfig) -> float:
    """Arrival actually accepted by the battery (harvest beyond free capacity is spilled)."""
    harvest = config.t_s * config.eta * theta
    room = max(0.0, config.battery_capacity - battery_before.stored)
    if harvest <= room:
        return theta
    if config.eta == 0:
        return theta
    return room / (config.t_s * config.eta)


def run_episode(config: ScenarioConfig, solver: str = "exact", seed: int | None = None,
                _cache: _SlotCache | None = None) -> EpisodeResult:
    """Run ``config.n_slots`` slots. Deterministic in ``(config, solver, seed)``."""
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    channels = sample_channels(config, rng)
    cache = _cache if _cache is not None else _SlotCache()
    battery = BatteryState(config.initial_stored)
    outcomes, thetas, levels = [], [], [battery.stored]
    for _ in range(config.n_slots):
        theta = sample_energy_arrival(config, rng)
        accepted = curtailed_arrival(theta, battery, config)
        out = cache.solve(channels, battery, accepted, config, solver)
        battery = battery_update(battery, config.t_s * config.eta * accepted, out.e_ris, config)
        assert battery == out.battery_after
        outcomes.append(out)
        thetas.append(theta)
        levels.append(battery.stored)
    return EpisodeResult(outcomes, thetas, levels)


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    params: dict = field(hash=False)
    e_users_mean: float
    e_ris_mean: float
    objective_mean: float
    elements_mean: float
    infeasible_rate: float
    scenarios: int


_ALIASES = {"n": "n_elements", "N": "n_elements"}
_CONFIG_FIELDS = {f.name for f in dataclasses.fields(ScenarioConfig)}


def apply_params(base: ScenarioConfig, params: dict) -> tuple[ScenarioConfig, str | None]:
    """Apply one grid point; ``ris_x``/``ris_y`` move the RIS, ``solver`` is split off."""
    changes, solver = {}, None
    for key, value in params.items():
        key = _ALIASES.get(key, key)
        if key == "solver":
            solver = value
        elif key == "ris_x":
            changes["ris_pos"] = (float(value), changes.get("ris_pos", base.ris_pos)[1])
        elif key == "ris_y":
            changes["ris_pos"] = (changes.get("ris_pos", base.ris_pos)[0], float(value))
        elif key in _CONFIG_FIELDS:
            changes[key] = value
        else:
            raise ValueError(f"unknown sweep parameter {key!r}")
    return base.replace(**changes), solver


def _run_point(args) -> SweepPoint:
    base, params, scenarios, solver = args
    config, override = apply_params(base, params)
    solver = override or solver
    cache = _SlotCache()
    episodes = [run_episode(config, solver, config.seed + k, _cache=cache) for k in range(scenarios)]
    slots = config.n_slots
    return SweepPoint(
        params=dict(params),
        e_users_mean=float(np.mean([e.e_users_total for e in episodes])),
        e_ris_mean=float(np.mean([e.e_ris_total for e in episodes])),
        objective_mean=float(np.mean([e.objective_total for e in episodes])),
        elements_mean=float(np.mean([e.mean_active for e in episodes])),
        infeasible_rate=float(np.mean([e.infeasible_slots / slots for e in episodes])),
        scenarios=scenarios,
    )


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get(THREADS_ENV)
    n = requested or os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def expand_grid(grid: dict) -> list[dict]:
    if not grid:
        return [{}]
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def run_sweep(base: ScenarioConfig, grid: dict, scenarios: int = 1, solver: str = "exact",
              workers: int | None = None) -> list[SweepPoint]:
    """Average episode totals over ``scenarios`` seeds at every point of the Cartesian grid."""
    if scenarios < 1:
        raise ValueError("scenarios must be >= 1")
    points = expand_grid(grid)
    if not points or any(len(v) == 0 for v in grid.values()):
        raise ValueError("sweep grid is empty")
    jobs = [(base, p, scenarios, solver) for p in points]
    n = min(worker_count(workers), len(jobs))
    if n == 1:
        return [_run_point(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_run_point, jobs))


def write_sweep_csv(points: list[SweepPoint], target) -> None:
    keys = list(points[0].params) if points else []
    with csv_writer(target) as writer:
        writer.writerow(keys + list(SWEEP_METRICS))
        for pt in points:
            writer.writerow([pt.params[k] for k in keys]
                            + [repr(getattr(pt, m)) for m in SWEEP_METRICS[:-1]]
                            + [pt.scenarios])
