import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from risopt.scenario import (
    ChannelRealization,
    ConfigError,
    ScenarioConfig,
    format_config,
    load_config,
    parse_config_text,
    path_loss_amplitude,
    sample_channels,
    sample_energy_arrival,
    truncated_normal_mean,
)


class TestConfig:
    def test_reference_defaults(self):
        # Reference system parameters: noise, peak power, element power, surface size.
        cfg = ScenarioConfig()
        assert cfg.sigma2 == pytest.approx(3.9811e-11)
        assert cfg.p_max == 1.0
        assert cfg.p_e == 5e-3
        assert cfg.n_elements == 50
        assert (cfg.t_s, cfg.eta, cfg.alpha) == (1.0, 0.9, 1.0)
        assert cfg.user1_pos == (1.0, 1.0) and cfg.user2_pos == (1000.0, 1.0)
        assert cfg.ris_pos[1] == 150.0
        assert (cfg.theta_mean, cfg.theta_var, cfg.theta_lo, cfg.theta_hi) == (2.0, 0.25, 0.0, 2.4)

    def test_noise_is_minus_104_dbw(self):
        assert 10 * math.log10(ScenarioConfig().sigma2) == pytest.approx(-104.0, abs=1e-3)

    def test_battery_starts_full_by_default(self):
        assert ScenarioConfig(battery_capacity=3.0).initial_stored == 3.0
        assert ScenarioConfig(battery_initial=1.0).initial_stored == 1.0

    @pytest.mark.parametrize("changes", [
        {"n_elements": 0}, {"p_min": 2.0}, {"alpha": 0.0}, {"alpha": 1.5}, {"eta": 1.2},
        {"zeta": -0.1}, {"sigma2": 0.0}, {"fading": "rician"}, {"battery_initial": 9.0},
        {"theta_lo": 3.0}, {"n_slots": 0}, {"user1_pos": (1.0, float("nan"))},
    ])
    def test_rejects_invalid(self, changes):
        with pytest.raises(ConfigError):
            ScenarioConfig(**changes)

    def test_text_round_trip(self, tmp_path):
        cfg = ScenarioConfig(ris_pos=(125.0, 150.0), r_th=7.5, fading="rayleigh",
                             los_present=False, battery_initial=0.25, seed=7)
        path = tmp_path / "run.cfg"
        path.write_text(format_config(cfg))
        assert load_config(path) == cfg

    def test_comments_blank_lines_and_partial_files(self):
        cfg = parse_config_text("# sweep base\n\nr_th = 7   # bits\nris_pos = 250, 150\n")
        assert cfg.r_th == 7.0 and cfg.ris_pos == (250.0, 150.0)
        assert cfg.n_elements == 50

    @pytest.mark.parametrize("text", ["nope = 1", "r_th = 1\nr_th = 2", "r_th", "ris_pos = 1",
                                      "n_elements = 2.5", "los_present = maybe"])
    def test_malformed_text(self, text):
        with pytest.raises(ConfigError):
            parse_config_text(text)


class TestChannels:
    def test_path_loss_is_amplitude_square_law(self):
        assert path_loss_amplitude(100.0, 2.0) == pytest.approx(1e-2)
        assert path_loss_amplitude(4.0, 4.0) == pytest.approx(1 / 16)
        with pytest.raises(ValueError):
            path_loss_amplitude(0.0, 2.0)

    def test_deterministic_geometry(self, rng):
        cfg = ScenarioConfig(n_elements=3, ris_pos=(500.0, 150.0))
        ch = sample_channels(cfg, rng)
        d1 = math.hypot(499.0, 149.0)
        d2 = math.hypot(500.0, 149.0)
        assert ch.h_direct == pytest.approx(1 / 999.0)
        np.testing.assert_allclose(ch.cascade, np.full((2, 3), 1 / (d1 * d2)))

    def test_blocked_direct_link(self, rng):
        assert sample_channels(ScenarioConfig(los_present=False), rng).h_direct == 0.0

    def test_no_randomness_drawn_without_fading(self):
        rng = np.random.default_rng(3)
        sample_channels(ScenarioConfig(), rng)
        assert rng.random() == np.random.default_rng(3).random()

    def test_rayleigh_against_reference_sampler(self):
        # numpy's Rayleigh(s) is s * sqrt(2 * Exp(1)); rebuild the draw from exponentials.
        cfg = ScenarioConfig(n_elements=5, fading="rayleigh")
        ch = sample_channels(cfg, np.random.default_rng(9))
        e = np.random.default_rng(9).standard_exponential(size=(2, 5))
        hops = np.sqrt(2 * e) / math.sqrt(2)
        base = sample_channels(cfg.replace(fading="none"), np.random.default_rng(0)).cascade[0]
        np.testing.assert_allclose(ch.cascade[0], base * hops[0] * hops[1], rtol=1e-12)
        np.testing.assert_array_equal(ch.cascade[0], ch.cascade[1])

    def test_rayleigh_hop_power_is_unit(self):
        cfg = ScenarioConfig(n_elements=20000, fading="rayleigh", user1_pos=(0.0, 0.0),
                             user2_pos=(2.0, 0.0), ris_pos=(1.0, 0.0))
        ch = sample_channels(cfg, np.random.default_rng(1))
        # E|g1 g2|^2 = 1 for unit-power hops, and the geometric factor is 1 here.
        assert np.mean(ch.cascade[0] ** 2) == pytest.approx(1.0, rel=0.05)

    def test_realization_is_immutable_and_validated(self):
        ch = ChannelRealization(0.1, np.ones((2, 3)))
        with pytest.raises(ValueError):
            ch.cascade[0, 0] = 2.0
        with pytest.raises(ValueError):
            ChannelRealization(-1.0, np.ones((2, 3)))
        with pytest.raises(ValueError):
            ChannelRealization(0.0, np.ones((3, 3)))


def _quad_truncnorm_mean(mu, var, lo, hi):
    sd = math.sqrt(var)
    pdf = lambda x: math.exp(-0.5 * ((x - mu) / sd) ** 2)  # noqa: E731
    num = integrate.quad(lambda x: x * pdf(x), lo, hi)[0]
    den = integrate.quad(pdf, lo, hi)[0]
    return num / den


class TestEnergyArrivals:
    def test_closed_form_mean_against_quadrature(self):
        for args in [(2.0, 0.25, 0.0, 2.4), (0.0, 1.0, -1.0, 3.0), (5.0, 4.0, 0.0, 1.0)]:
            assert truncated_normal_mean(*args) == pytest.approx(_quad_truncnorm_mean(*args), rel=1e-9)

    def test_sample_statistics(self):
        cfg = ScenarioConfig()
        rng = np.random.default_rng(2)
        draws = np.array([sample_energy_arrival(cfg, rng) for _ in range(20000)])
        assert draws.min() >= 0.0 and draws.max() <= 2.4
        assert draws.mean() == pytest.approx(_quad_truncnorm_mean(2.0, 0.25, 0.0, 2.4), abs=0.01)
        a, b = -4.0, 0.8
        ks = stats.kstest(draws, stats.truncnorm(a, b, loc=2.0, scale=0.5).cdf)
        assert ks.pvalue > 1e-3

    def test_zero_variance_clamps(self, rng):
        assert sample_energy_arrival(ScenarioConfig(theta_var=0.0), rng) == 2.0
        assert sample_energy_arrival(ScenarioConfig(theta_var=0.0, theta_mean=9.0), rng) == 2.4

    def test_degenerate_interval(self, rng):
        with pytest.raises(ValueError):
            sample_energy_arrival(ScenarioConfig(theta_lo=1.0, theta_hi=1.0), rng)

    def test_far_tail_uses_inverse_cdf(self, rng):
        cfg = ScenarioConfig(theta_mean=0.0, theta_var=0.01, theta_lo=2.0, theta_hi=2.4)
        draws = [sample_energy_arrival(cfg, rng) for _ in range(200)]
        assert min(draws) >= 2.0 and max(draws) <= 2.4

    @settings(max_examples=50, deadline=None)
    @given(mean=st.floats(-3, 3), var=st.floats(0.01, 4), lo=st.floats(-2, 1),
           width=st.floats(0.05, 3), seed=st.integers(0, 2**32 - 1))
    def test_draws_stay_in_support(self, mean, var, lo, width, seed):
        cfg = ScenarioConfig(theta_mean=mean, theta_var=var, theta_lo=lo, theta_hi=lo + width)
        x = sample_energy_arrival(cfg, np.random.default_rng(seed))
        assert lo <= x <= lo + width
