"""Random slot instances and the built-in oracle cross-checks behind ``risopt validate``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import benders, milp
from .physics import BatteryState, check_feasible
from .scenario import ChannelRealization, ScenarioConfig, sample_channels


@dataclass(frozen=True)
class Instance:
    config: ScenarioConfig
    channels: ChannelRealization
    battery: BatteryState
    theta: float


def random_instance(rng: np.random.Generator, max_n: int = 6, los: bool | None = True) -> Instance:
    """Default physics with a random RIS abscissa, size, threshold, weight and battery level.

    Thresholds up to 16 bit/s/Hz and batteries up to 30 mJ make both element
    budgets and peak power bind, so feasible and infeasible cases both occur.
    One instance in ten violates the capacity gate. ``los=None`` mixes in
    blocked direct links (with lower thresholds, which only the surface can serve).
    """
    n = int(rng.integers(1, max_n + 1))
    los_present = bool(rng.random() < 0.5) if los is None else los
    r_th = float(rng.uniform(0.1, 16.0)) if los_present else float(rng.uniform(0.05, 4.0))
    config = ScenarioConfig(
        n_elements=n,
        ris_pos=(float(rng.uniform(1.0, 1000.0)), 150.0),
        r_th=r_th,
        zeta=float(rng.uniform(0.0, 1.0)),
        los_present=los_present,
    )
    channels = sample_channels(config, rng)
    battery = BatteryState(float(rng.uniform(0.0, 0.03)))
    theta = 0.0
    if rng.random() < 0.1:
        theta = (config.battery_capacity - battery.stored) / (config.t_s * config.eta) + 1.0
    return Instance(config, channels, battery, theta)


@dataclass
class ValidationReport:
    instances: int
    exact_mismatches: int = 0
    benders_infeasible: int = 0
    benders_below_optimum: int = 0
    ub_violations: int = 0
    gaps: list[float] = field(default_factory=list)
    feasible: int = 0

    @property
    def mean_gap(self) -> float:
        return float(np.mean(self.gaps)) if self.gaps else 0.0

    @property
    def passed(self) -> bool:
        return (self.exact_mismatches == 0 and self.benders_infeasible == 0
                and self.benders_below_optimum == 0 and self.ub_violations == 0
                and self.mean_gap <= 0.05)

    def summary(self) -> str:
        return (f"instances={self.instances} feasible={self.feasible} "
                f"exact_mismatches={self.exact_mismatches} "
                f"benders_infeasible={self.benders_infeasible} "
                f"benders_below_optimum={self.benders_below_optimum} "
                f"ub_violations={self.ub_violations} mean_gap={self.mean_gap:.3%} "
                f"-> {'PASS' if self.passed else 'FAIL'}")


def run_validation(max_n: int = 6, instances: int = 50, seed: int = 0,
                   tol: float = 1e-9) -> ValidationReport:
    """Exact solver against exhaustive enumeration, then the decomposition against both."""
    if max_n > 8:
        raise ValueError("exhaustive enumeration is limited to N <= 8")
    rng = np.random.default_rng(seed)
    report = ValidationReport(instances)
    for _ in range(instances):
        inst = random_instance(rng, max_n)
        args = (inst.channels, inst.battery, inst.theta, inst.config)
        exact = milp.solve_exact(milp.build_program(*args))
        oracle = milp.exhaustive_oracle(*args)
        if exact.status != oracle.status or (
                exact.optimal and abs(exact.objective - oracle.objective) > tol):
            report.exact_mismatches += 1
        outcome, trace = benders.benders_iterate(*args)
        ub = trace.upper_bounds()
        if any(b > a for a, b in zip(ub, ub[1:])):
            report.ub_violations += 1
        if not exact.optimal:
            continue
        report.feasible += 1
        ok = check_feasible(outcome.assignment, outcome.power, inst.battery, inst.theta,
                            inst.channels, inst.config).ok
        if not ok:
            report.benders_infeasible += 1
            continue
        if outcome.objective < exact.objective - tol:
            report.benders_below_optimum += 1
        report.gaps.append((outcome.objective - exact.objective) / max(exact.objective, math.ulp(1.0)))
    return report
