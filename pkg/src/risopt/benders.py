"""Decomposition heuristic: element selection at fixed powers, powers at fixed elements.

The master problem picks the fewest elements meeting both rate thresholds at
the current powers, using the square-root form of the rate constraint, which
is linear in the element indicators. The auxiliary problem returns the
closed-form minimal powers for the chosen elements. The two alternate from
``p_max`` until the bounds meet or the assignment repeats.
"""

from __future__ import annotations

import contextlib
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .physics import (
    BatteryState,
    ElementAssignment,
    PowerAllocation,
    SlotOutcome,
    affordable_elements,
    capacity_ok,
    evaluate_slot,
    infeasible_outcome,
    link_amplitude,
    minimal_power,
    other,
    ris_consumption,
    scalarize,
    snr_target,
    user_energy,
)
from .scenario import ChannelRealization, ScenarioConfig

# Relative slack on the square-root rate test, so that an assignment stays
# feasible at the exact power the auxiliary problem computed for it.
_COVER_RTOL = 1e-12


@contextlib.contextmanager
def csv_writer(target):
    """csv.writer over a path (opened and closed here) or an already-open text stream."""
    if hasattr(target, "write"):
        yield csv.writer(target)
        return
    with open(target, "w", newline="") as fh:
        yield csv.writer(fh)


@dataclass(frozen=True)
class MasterSolution:
    assignment: ElementAssignment | None
    e_ris: float
    status: str

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True)
class AuxSolution:
    power: PowerAllocation | None
    e_users: tuple[float, float] | None
    status: str
    reason: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    p_bar: tuple[float, float]
    assignment: ElementAssignment | None
    master_objective: float
    aux_objective: float
    combined: float
    lower_bound: float
    upper_bound: float

    @property
    def active_elements(self) -> int:
        return self.assignment.active if self.assignment is not None else 0


@dataclass
class BendersTrace:
    records: list[TraceRecord] = field(default_factory=list)
    stop_reason: str = ""

    def __len__(self):
        return len(self.records)

    def upper_bounds(self) -> list[float]:
        return [r.upper_bound for r in self.records]

    def write_csv(self, target) -> None:
        with csv_writer(target) as writer:
            writer.writerow(["iteration", "ub", "lb", "e_ris", "e_users", "active_elements"])
            for r in self.records:
                writer.writerow([r.iteration, repr(r.upper_bound), repr(r.lower_bound),
                                 repr(r.master_objective), repr(r.aux_objective),
                                 r.active_elements])


def amplitude_thresholds(p_bar: PowerAllocation, channels: ChannelRealization,
                         config: ScenarioConfig) -> list[float]:
    """Per-direction coherent amplitude needed at the given powers (square-root form)."""
    target = snr_target(config) * config.sigma2
    out = []
    for i in (0, 1):
        p = p_bar[other(i)]
        if target <= 0:
            out.append(0.0)
        elif p <= 0:
            out.append(math.inf)
        else:
            out.append(math.sqrt(target / p))
    return out


def _min_cover(need: list[float], weights: np.ndarray, budget: int) -> list[int] | None:
    """Fewest elements, each serving at most one direction, with sum(weights[i]) >= need[i].

    Returns per-element choices (-1 off, 0 or 1) or None when impossible.
    """
    n = weights.shape[1]
    dirs = [i for i in (0, 1) if need[i] > 0]
    orders = [np.argsort(-weights[i], kind="stable") for i in (0, 1)]

    def greedy(i):
        picked, total = [], 0.0
        for k in orders[i]:
            if total >= need[i]:
                break
            picked.append(int(k))
            total += weights[i][k]
        return picked if total >= need[i] else None

    sets = {}
    for i in dirs:
        sets[i] = greedy(i)
        if sets[i] is None:
            return None
    choices = [-1] * n
    if len(dirs) < 2 or not set(sets[0]) & set(sets[1]):
        for i, picked in sets.items():
            for k in picked:
                choices[k] = i
        return choices if sum(len(p) for p in sets.values()) <= budget else None

    # Contested elements: exact search over all elements in descending order.
    order = [int(k) for k in np.argsort(-weights.max(axis=0), kind="stable")]
    best = {"count": min(budget, n) + 1, "choices": None}
    cur = [-1] * n

    def lower(pos, residual):
        """Fewest further elements each direction needs from order[pos:], ignoring conflicts."""
        rest = set(order[pos:])
        total = 0
        for i in dirs:
            if residual[i] <= 0:
                continue
            acc, cnt = 0.0, 0
            for k in orders[i]:
                if k in rest:
                    acc += weights[i][k]
                    cnt += 1
                    if acc >= residual[i]:
                        break
            if acc < residual[i]:
                return None
            total += cnt
        return total

    root_lb = lower(0, need)

    def dfs(pos, residual, used):
        if best["count"] == root_lb:
            return
        lb = lower(pos, residual)
        if lb is None or used + lb >= best["count"]:
            return
        if lb == 0:
            best["count"], best["choices"] = used, list(cur)
            return
        k = order[pos]
        # Only directions still in deficit are worth an element.
        options = sorted((i for i in dirs if residual[i] > 0), key=lambda i: -residual[i])
        for i in options:
            cur[k] = i
            nxt = list(residual)
            nxt[i] -= weights[i][k]
            dfs(pos + 1, nxt, used + 1)
            cur[k] = -1
        dfs(pos + 1, residual, used)

    if root_lb is None:
        return None
    dfs(0, [need[0] if 0 in dirs else 0.0, need[1] if 1 in dirs else 0.0], 0)
    return best["choices"]


def solve_master(p_bar: PowerAllocation, channels: ChannelRealization,
                 battery_before: BatteryState, theta: float,
                 config: ScenarioConfig) -> MasterSolution:
    """Minimum-energy element selection meeting both thresholds at powers ``p_bar``."""
    infeasible = MasterSolution(None, math.nan, "infeasible")
    if not capacity_ok(battery_before, theta, config):
        return infeasible
    taus = amplitude_thresholds(p_bar, channels, config)
    need = [(tau * (1.0 - _COVER_RTOL) - channels.h_direct) / config.alpha for tau in taus]
    if any(math.isinf(v) for v in need):
        return infeasible
    budget = affordable_elements(battery_before.stored, config)
    choices = _min_cover(need, np.asarray(channels.cascade), budget)
    if choices is None:
        return infeasible
    assignment = ElementAssignment.from_choices(choices)
    return MasterSolution(assignment, ris_consumption(assignment, config), "optimal")


def solve_auxiliary(eps_bar: ElementAssignment, channels: ChannelRealization,
                    battery_before: BatteryState, theta: float,
                    config: ScenarioConfig) -> AuxSolution:
    """Closed-form minimal powers for a fixed element assignment."""
    if not capacity_ok(battery_before, theta, config):
        return AuxSolution(None, None, "infeasible", "capacity")
    if ris_consumption(eps_bar, config) > battery_before.stored + 1e-9:
        return AuxSolution(None, None, "infeasible", "causality")
    powers = [0.0, 0.0]
    for j in (0, 1):
        i = other(j)
        p = minimal_power(i, eps_bar, channels, config)
        if p is None:
            no_path = link_amplitude(i, eps_bar, channels, config) == 0
            reason = f"no path towards user {i}" if no_path else f"power of user {j} exceeds p_max"
            return AuxSolution(None, None, "infeasible", reason)
        powers[j] = p
    power = PowerAllocation(tuple(powers))
    return AuxSolution(power, user_energy(power, config), "optimal")


def lower_bound(channels: ChannelRealization, first_master: MasterSolution,
                config: ScenarioConfig) -> float:
    """Valid bound: fewest elements at peak power, and each user's power with all elements."""
    target = snr_target(config) * config.sigma2
    users = 0.0
    for j in (0, 1):
        i = other(j)
        g = channels.h_direct + config.alpha * float(channels.cascade[i].sum())
        p = config.p_min
        if target > 0:
            p = max(p, target / (g * g)) if g * g > 0 else math.inf
        users += config.t_s * p
    e_ris = first_master.e_ris if first_master.optimal else 0.0
    return config.zeta * e_ris + (1.0 - config.zeta) * users


def benders_iterate(channels: ChannelRealization, battery_before: BatteryState, theta: float,
                    config: ScenarioConfig, tol: float = 1e-4,
                    max_iter: int = 50) -> tuple[SlotOutcome, BendersTrace]:
    if tol <= 0 or max_iter < 1:
        raise ValueError("need tol > 0 and max_iter >= 1")
    trace = BendersTrace()
    p_bar = PowerAllocation((config.p_max, config.p_max))
    best, ub, lb = None, math.inf, -math.inf
    seen = set()
    for it in range(1, max_iter + 1):
        master = solve_master(p_bar, channels, battery_before, theta, config)
        if it == 1:
            lb = lower_bound(channels, master, config)
        if not master.optimal:
            trace.records.append(TraceRecord(it, p_bar.p, None, math.nan, math.nan, math.nan, lb, ub))
            trace.stop_reason = "master infeasible"
            break
        aux = solve_auxiliary(master.assignment, channels, battery_before, theta, config)
        combined = math.nan
        if aux.optimal:
            combined = scalarize(master.e_ris, aux.e_users, config)
            if combined < ub:
                ub, best = combined, (master.assignment, aux.power)
        trace.records.append(TraceRecord(it, p_bar.p, master.assignment, master.e_ris,
                                         sum(aux.e_users) if aux.optimal else math.nan,
                                         combined, lb, ub))
        if not aux.optimal:
            trace.stop_reason = f"auxiliary infeasible: {aux.reason}"
            break
        if (ub - lb) / max(ub, 1e-300) <= tol:
            trace.stop_reason = "bounds converged"
            break
        if master.assignment in seen:
            trace.stop_reason = "assignment repeated"
            break
        seen.add(master.assignment)
        p_bar = aux.power
    else:
        trace.stop_reason = "max_iter"

    if best is None:
        return infeasible_outcome(channels, battery_before, theta, config), trace
    assignment, power = best
    return evaluate_slot(assignment, power, battery_before, theta, channels, config), trace
