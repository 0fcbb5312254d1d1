"""Rate, energy and battery models for one slot of the two-way RIS link.

Users are indexed 0 and 1. ``other(i)`` is the transmitter whose signal is
received by user ``i``; the rate towards ``i`` therefore depends on
``power[other(i)]`` and on the elements assigned to direction ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .scenario import ChannelRealization, ScenarioConfig

# Absolute slack (Joules) on battery causality / capacity comparisons.
ENERGY_TOL = 1e-9


def other(i: int) -> int:
    return 1 - i


@dataclass(frozen=True, eq=False)
class ElementAssignment:
    """Binary N x 2 matrix; ``eps[n, i] == 1`` when element n reflects towards user i."""

    eps: np.ndarray

    def __post_init__(self):
        eps = np.array(self.eps, dtype=np.int8)
        if eps.ndim != 2 or eps.shape[1] != 2:
            raise ValueError("eps must have shape (N, 2)")
        if np.any((eps != 0) & (eps != 1)):
            raise ValueError("eps must be binary")
        if np.any(eps.sum(axis=1) > 1):
            raise ValueError("an element can reflect towards at most one user")
        eps.setflags(write=False)
        object.__setattr__(self, "eps", eps)

    @classmethod
    def off(cls, n: int) -> "ElementAssignment":
        return cls(np.zeros((n, 2), dtype=np.int8))

    @classmethod
    def from_choices(cls, choices) -> "ElementAssignment":
        """Build from per-element choices: -1 off, 0 towards user 0, 1 towards user 1."""
        choices = list(choices)
        eps = np.zeros((len(choices), 2), dtype=np.int8)
        for n, c in enumerate(choices):
            if c >= 0:
                eps[n, c] = 1
        return cls(eps)

    @property
    def n_elements(self) -> int:
        return self.eps.shape[0]

    @property
    def active(self) -> int:
        return int(self.eps.sum())

    def counts(self) -> tuple[int, int]:
        return int(self.eps[:, 0].sum()), int(self.eps[:, 1].sum())

    def choices(self) -> tuple[int, ...]:
        return tuple(int(np.argmax(r)) if r.any() else -1 for r in self.eps)

    def __eq__(self, other_):
        return isinstance(other_, ElementAssignment) and np.array_equal(self.eps, other_.eps)

    def __hash__(self):
        return hash(self.eps.tobytes())


@dataclass(frozen=True)
class PowerAllocation:
    p: tuple[float, float]

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        if len(p) != 2:
            raise ValueError("power allocation needs two entries")
        object.__setattr__(self, "p", p)

    def __getitem__(self, i: int) -> float:
        return self.p[i]


@dataclass(frozen=True)
class BatteryState:
    stored: float


@dataclass(frozen=True)
class SlotOutcome:
    assignment: ElementAssignment
    power: PowerAllocation
    rates: tuple[float, float]
    e_ris: float
    e_users: tuple[float, float]
    objective: float
    battery_after: BatteryState
    feasible: bool
    violations: tuple[str, ...] = field(default=())


class Feasibility(NamedTuple):
    ok: bool
    violations: list[str]


def link_amplitude(i: int, assignment: ElementAssignment, channels: ChannelRealization,
                   config: ScenarioConfig) -> float:
    """Coherent amplitude ``|h| + alpha * sum_n eps[n, i] * H[i, n]`` towards user i."""
    sel = assignment.eps[:, i].astype(bool)
    return channels.h_direct + config.alpha * float(channels.cascade[i][sel].sum())


def achievable_rate(i: int, assignment: ElementAssignment, power: PowerAllocation,
                    channels: ChannelRealization, config: ScenarioConfig) -> float:
    """Spectral efficiency (bits/s/Hz) at user i with optimally aligned phases."""
    g = link_amplitude(i, assignment, channels, config)
    return math.log2(1.0 + power[other(i)] * g * g / config.sigma2)


def snr_target(config: ScenarioConfig) -> float:
    """Linear SNR needed to reach ``r_th``."""
    return 2.0 ** config.r_th - 1.0


def minimal_power(i: int, assignment: ElementAssignment, channels: ChannelRealization,
                  config: ScenarioConfig) -> float | None:
    """Smallest power of ``other(i)`` meeting ``r_th`` at user i, or None if above p_max.

    Closed form ``(2**r_th - 1) sigma2 / amplitude**2`` clipped up to p_min, then
    nudged upwards (doubling steps from one ulp) so ``achievable_rate`` reports
    at least ``r_th``. At low SNR ``1 + snr`` absorbs many ulps of ``p``, hence
    the growing step.
    """
    target = snr_target(config)
    if target <= 0:
        return config.p_min
    g = link_amplitude(i, assignment, channels, config)
    gain = g * g
    if gain == 0:  # no path, or an amplitude so small its square underflows
        return None
    p = max(target * config.sigma2 / gain, config.p_min)
    if p > config.p_max:
        return None
    step = math.ulp(p)
    while achievable_rate(i, assignment, PowerAllocation((p, p)), channels, config) < config.r_th:
        p += step
        step *= 2.0
    if p > config.p_max:
        return None
    return p


def ris_consumption(assignment: ElementAssignment, config: ScenarioConfig) -> float:
    return config.t_s * config.p_e * assignment.active


def harvest_energy(theta: float, config: ScenarioConfig) -> float:
    if theta < 0:
        raise ValueError("theta must be >= 0")
    return config.t_s * config.eta * theta


def battery_update(prev: BatteryState, harvested: float, consumed: float,
                   config: ScenarioConfig) -> BatteryState:
    """Harvest-store-use recursion; overflow beyond capacity is discarded."""
    if harvested < 0 or consumed < 0:
        raise ValueError("harvested and consumed energy must be >= 0")
    stored = max(0.0, prev.stored + harvested - consumed)
    return BatteryState(min(config.battery_capacity, stored))


def user_energy(power: PowerAllocation, config: ScenarioConfig) -> tuple[float, float]:
    return (config.t_s * power[0], config.t_s * power[1])


def scalarize(e_ris: float, e_users, config: ScenarioConfig) -> float:
    return config.zeta * e_ris + (1.0 - config.zeta) * (e_users[0] + e_users[1])


def objective_value(assignment: ElementAssignment, power: PowerAllocation,
                    config: ScenarioConfig) -> float:
    return scalarize(ris_consumption(assignment, config), user_energy(power, config), config)


def affordable_elements(stored: float, config: ScenarioConfig) -> int:
    """Largest element count whose consumption fits in ``stored`` (within ENERGY_TOL)."""
    unit = config.t_s * config.p_e
    if unit == 0:
        return 1 << 62
    k = max(0, int(math.floor((stored + ENERGY_TOL) / unit)) + 1)
    while k > 0 and unit * k > stored + ENERGY_TOL:
        k -= 1
    return k


def check_feasible(assignment: ElementAssignment, power: PowerAllocation,
                   battery_before: BatteryState, theta: float, channels: ChannelRealization,
                   config: ScenarioConfig) -> Feasibility:
    """Check power bounds, exclusivity, both rate thresholds, causality and capacity.

    Rates are compared exactly (no slack); energies use ``ENERGY_TOL``.
    """
    violations = []
    for i in (0, 1):
        if not config.p_min <= power[i] <= config.p_max:
            violations.append(f"power[{i}]={power[i]!r} outside [{config.p_min}, {config.p_max}]")
    if np.any(assignment.eps.sum(axis=1) > 1):
        violations.append("exclusivity")
    for i in (0, 1):
        rate = achievable_rate(i, assignment, power, channels, config)
        if not rate >= config.r_th:
            violations.append(f"rate[{i}]={rate:.6g} below r_th={config.r_th}")
    consumed = ris_consumption(assignment, config)
    if consumed > battery_before.stored + ENERGY_TOL:
        violations.append(f"causality: needs {consumed:.6g} J, stored {battery_before.stored:.6g} J")
    if battery_before.stored + harvest_energy(theta, config) > config.battery_capacity + ENERGY_TOL:
        violations.append("capacity: stored + harvested exceeds battery capacity")
    return Feasibility(not violations, violations)


def capacity_ok(battery_before: BatteryState, theta: float, config: ScenarioConfig) -> bool:
    return battery_before.stored + harvest_energy(theta, config) <= config.battery_capacity + ENERGY_TOL


def evaluate_slot(assignment: ElementAssignment, power: PowerAllocation,
                  battery_before: BatteryState, theta: float, channels: ChannelRealization,
                  config: ScenarioConfig) -> SlotOutcome:
    """Score a candidate decision and propagate the battery.

    An infeasible decision consumes no RIS energy; the users are charged for
    the power they transmitted.
    """
    feas = check_feasible(assignment, power, battery_before, theta, channels, config)
    rates = tuple(achievable_rate(i, assignment, power, channels, config) for i in (0, 1))
    e_ris = ris_consumption(assignment, config) if feas.ok else 0.0
    e_users = user_energy(power, config)
    after = battery_update(battery_before, harvest_energy(theta, config), e_ris, config)
    return SlotOutcome(
        assignment=assignment,
        power=power,
        rates=rates,
        e_ris=e_ris,
        e_users=e_users,
        objective=scalarize(e_ris, e_users, config),
        battery_after=after,
        feasible=feas.ok,
        violations=tuple(feas.violations),
    )


def best_effort_assignment(channels: ChannelRealization, battery_before: BatteryState,
                           config: ScenarioConfig) -> ElementAssignment:
    """All affordable elements, strongest first, each to the currently weaker direction."""
    n = channels.n_elements
    budget = min(n, affordable_elements(battery_before.stored, config))
    order = np.argsort(-channels.cascade.max(axis=0), kind="stable")
    amp = [channels.h_direct, channels.h_direct]
    choices = [-1] * n
    for idx in order[:budget]:
        i = 0 if amp[0] <= amp[1] else 1
        choices[idx] = i
        amp[i] += config.alpha * channels.cascade[i][idx]
    return ElementAssignment.from_choices(choices)


def infeasible_outcome(channels: ChannelRealization, battery_before: BatteryState, theta: float,
                       config: ScenarioConfig) -> SlotOutcome:
    """Record for a slot with no feasible decision: peak power, best-effort elements."""
    assignment = best_effort_assignment(channels, battery_before, config)
    power = PowerAllocation((config.p_max, config.p_max))
    return evaluate_slot(assignment, power, battery_before, theta, channels, config)
