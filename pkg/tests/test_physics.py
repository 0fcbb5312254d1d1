import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import phase_grid_best_gain, phase_grid_polished_gain, rate_from_gain
from risopt.physics import (
    BatteryState,
    ElementAssignment,
    PowerAllocation,
    achievable_rate,
    affordable_elements,
    battery_update,
    best_effort_assignment,
    check_feasible,
    evaluate_slot,
    infeasible_outcome,
    link_amplitude,
    minimal_power,
    objective_value,
    ris_consumption,
)
from risopt.scenario import ChannelRealization, ScenarioConfig

UNIT = ScenarioConfig(sigma2=1.0, r_th=1.0, n_elements=2, p_max=10.0)


def channels(h, row0, row1=None):
    row0 = np.asarray(row0, dtype=float)
    return ChannelRealization(h, np.vstack([row0, row0 if row1 is None else row1]))


class TestElementAssignment:
    def test_exclusivity_enforced(self):
        with pytest.raises(ValueError):
            ElementAssignment(np.array([[1, 1], [0, 0]]))
        with pytest.raises(ValueError):
            ElementAssignment(np.array([[2, 0]]))

    def test_choices_round_trip(self):
        a = ElementAssignment.from_choices([-1, 0, 1, 1])
        assert a.choices() == (-1, 0, 1, 1)
        assert a.counts() == (1, 2) and a.active == 3
        assert a == ElementAssignment.from_choices([-1, 0, 1, 1])
        assert len({a, ElementAssignment.from_choices([-1, 0, 1, 1])}) == 1

    def test_off(self):
        assert ElementAssignment.off(5).active == 0


class TestRate:
    def test_direct_only(self):
        ch = channels(1.0, [0.5, 0.5])
        rate = achievable_rate(0, ElementAssignment.off(2), PowerAllocation((1.0, 1.0)), ch, UNIT)
        assert rate == pytest.approx(1.0)

    def test_coherent_sum_uses_partner_power_and_own_direction(self):
        ch = channels(1.0, [0.5, 0.25], [2.0, 3.0])
        a = ElementAssignment.from_choices([0, 1])
        # Towards user 0: (1 + 0.5)^2 * p1; towards user 1: (1 + 3)^2 * p0.
        p = PowerAllocation((0.5, 2.0))
        assert achievable_rate(0, a, p, ch, UNIT) == pytest.approx(math.log2(1 + 2.0 * 2.25))
        assert achievable_rate(1, a, p, ch, UNIT) == pytest.approx(math.log2(1 + 0.5 * 16.0))

    def test_alpha_scales_cascade_only(self):
        cfg = UNIT.replace(alpha=0.5)
        ch = channels(1.0, [2.0, 2.0])
        assert link_amplitude(0, ElementAssignment.from_choices([0, 0]), ch, cfg) == 3.0

    def test_phase_reduction_single_instance(self):
        # Magnitude-sum gain equals the best phase configuration.
        rng = np.random.default_rng(4)
        h = complex(*rng.normal(size=2))
        g = rng.normal(size=2) + 1j * rng.normal(size=2)
        assert phase_grid_polished_gain(h, g) == pytest.approx(abs(h) + np.abs(g).sum(), rel=1e-9)
        # The raw grid is within the quantisation bound cos(pi / levels) of the optimum.
        raw = phase_grid_best_gain(h, g)
        assert raw <= abs(h) + np.abs(g).sum() + 1e-12
        assert raw >= (abs(h) + np.abs(g).sum()) * math.cos(math.pi / 256) - 1e-12


class TestMinimalPower:
    def test_unit_example(self):
        # (2^1 - 1) * 1 / 1^2 = 1
        ch = channels(1.0, [0.0, 0.0])
        assert minimal_power(0, ElementAssignment.off(2), ch, UNIT) == pytest.approx(1.0)

    def test_zero_threshold_gives_pmin(self):
        cfg = UNIT.replace(r_th=0.0, p_min=0.25)
        assert minimal_power(0, ElementAssignment.off(2), channels(0.0, [0, 0]), cfg) == 0.25

    def test_no_path(self):
        assert minimal_power(0, ElementAssignment.off(2), channels(0.0, [1, 1]), UNIT) is None

    def test_exceeds_pmax(self):
        assert minimal_power(0, ElementAssignment.off(2), channels(0.1, [0, 0]), UNIT) is None

    def test_clipped_up_to_pmin(self):
        cfg = UNIT.replace(p_min=3.0)
        assert minimal_power(0, ElementAssignment.off(2), channels(1.0, [0, 0]), cfg) == 3.0

    @settings(max_examples=300, deadline=None)
    @given(r_th=st.floats(1e-4, 20), h=st.floats(0, 1e-2), seed=st.integers(0, 10**6))
    def test_meets_threshold_with_negligible_overshoot(self, r_th, h, seed):
        rng = np.random.default_rng(seed)
        cfg = ScenarioConfig(n_elements=4, r_th=r_th, p_max=1e6)
        ch = channels(h, rng.uniform(0, 1e-4, 4))
        a = ElementAssignment.from_choices(rng.integers(-1, 2, 4))
        p = minimal_power(0, a, ch, cfg)
        g = link_amplitude(0, a, ch, cfg)
        if g * g == 0:
            assert p is None
            return
        exact = (2**r_th - 1) * cfg.sigma2 / g**2
        if exact > cfg.p_max:
            return
        assert p is not None
        assert achievable_rate(0, a, PowerAllocation((p, p)), ch, cfg) >= r_th
        assert p == pytest.approx(exact, rel=1e-9)


class TestBattery:
    cfg = ScenarioConfig(battery_capacity=1.0)

    def test_recursion(self):
        assert battery_update(BatteryState(0.5), 0.2, 0.1, self.cfg).stored == pytest.approx(0.6)

    def test_overflow_discarded(self):
        assert battery_update(BatteryState(0.9), 0.5, 0.0, self.cfg).stored == 1.0

    def test_negative_inputs_rejected(self):
        with pytest.raises(ValueError):
            battery_update(BatteryState(0.5), -0.1, 0.0, self.cfg)

    @given(stored=st.floats(0, 1), harvested=st.floats(0, 3), consumed=st.floats(0, 1))
    def test_bounds(self, stored, harvested, consumed):
        after = battery_update(BatteryState(stored), harvested, min(consumed, stored), self.cfg)
        assert 0.0 <= after.stored <= 1.0

    @given(stored=st.floats(0, 2))
    def test_affordable_elements(self, stored):
        cfg = ScenarioConfig(p_e=5e-3)
        k = affordable_elements(stored, cfg)
        assert k * 5e-3 <= stored + 1e-9
        assert (k + 1) * 5e-3 > stored + 1e-9


class TestFeasibilityAndOutcome:
    def setup_method(self):
        self.cfg = UNIT.replace(battery_capacity=1.0, p_e=0.1)
        self.ch = channels(1.0, [1.0, 1.0])

    def test_feasible_point(self):
        a = ElementAssignment.from_choices([0, 1])
        p = PowerAllocation((0.25, 0.25))  # (1 + 1)^2 * 0.25 = 1 -> rate 1
        assert check_feasible(a, p, BatteryState(0.5), 0.0, self.ch, self.cfg).ok

    def test_each_violation_reported(self):
        a = ElementAssignment.from_choices([0, 1])
        feas = check_feasible(a, PowerAllocation((0.2, 11.0)), BatteryState(0.1), 2.0, self.ch, self.cfg)
        text = " ".join(feas.violations)
        for word in ("power[1]", "rate[1]", "causality", "capacity"):
            assert word in text

    def test_evaluate_feasible_slot(self):
        a = ElementAssignment.from_choices([0, 1])
        out = evaluate_slot(a, PowerAllocation((0.25, 0.25)), BatteryState(0.5), 0.1, self.ch, self.cfg)
        assert out.feasible and out.e_ris == pytest.approx(0.2)
        assert out.battery_after.stored == pytest.approx(0.5 + 0.09 - 0.2)
        assert out.objective == pytest.approx(objective_value(a, out.power, self.cfg))

    def test_infeasible_slot_consumes_no_ris_energy(self):
        a = ElementAssignment.from_choices([0, 1])
        out = evaluate_slot(a, PowerAllocation((0.01, 0.01)), BatteryState(0.5), 0.0, self.ch, self.cfg)
        assert not out.feasible and out.e_ris == 0.0
        assert out.e_users == (0.01, 0.01)
        assert out.battery_after.stored == 0.5

    def test_best_effort_respects_budget(self):
        ch = channels(0.0, [3.0, 2.0, 1.0])
        a = best_effort_assignment(ch, BatteryState(0.2), self.cfg.replace(n_elements=3))
        assert a.active == 2 and a.choices()[2] == -1
        assert ris_consumption(a, self.cfg) <= 0.2 + 1e-9

    def test_infeasible_outcome_uses_peak_power(self):
        out = infeasible_outcome(channels(0.0, [1e-9, 1e-9]), BatteryState(0.0), 0.0, self.cfg)
        assert out.power.p == (10.0, 10.0) and not out.feasible

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_rate_monotone_in_added_elements(self, seed):
        rng = np.random.default_rng(seed)
        ch = channels(float(rng.uniform(0, 1)), rng.uniform(0, 1, 5))
        choices = list(rng.integers(-1, 2, 5))
        off = [k for k, c in enumerate(choices) if c == -1]
        base = ElementAssignment.from_choices(choices)
        p = PowerAllocation((0.3, 0.3))
        for k in off:
            more = list(choices)
            more[k] = 0
            assert achievable_rate(0, ElementAssignment.from_choices(more), p, ch, UNIT) >= \
                achievable_rate(0, base, p, ch, UNIT)

    def test_rate_helper_matches_oracle(self):
        assert rate_from_gain(1.0, 1.0, 1.0) == 1.0
