"""Scenario geometry, channel magnitudes and solar energy arrivals.

Channels are amplitude magnitudes only. The direct link and every element
cascade are built from a distance power law, with optional Rayleigh factors
per element. Randomness is drawn from a caller-owned ``numpy.random.Generator``
in a fixed order so that a seed fully determines a scenario:

1. ``sample_channels``: when ``fading == "rayleigh"``, one call
   ``rng.rayleigh(scale=1/sqrt(2), size=(2, N))`` (row 0 is the u1-RIS hop,
   row 1 the u2-RIS hop). Nothing is drawn when ``fading == "none"``.
2. ``sample_energy_arrival``: batches of ``rng.normal`` for rejection sampling.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

FADING_MODES = ("none", "rayleigh")

# Below this acceptance probability rejection sampling is replaced by
# inverse-CDF sampling.
_MIN_ACCEPTANCE = 1e-3
_BATCH = 64


class ConfigError(ValueError):
    """Raised for invalid scenario parameters or malformed config files."""


@dataclass(frozen=True)
class ScenarioConfig:
    """All parameters of one simulated scenario (SI units).

    Defaults are the reference experiment setting: users at
    (1, 1) and (1000, 1), RIS at y = 150, 50 elements, 5 mW per element.
    ``battery_initial`` of ``None`` means "start full".
    """

    user1_pos: tuple[float, float] = (1.0, 1.0)
    user2_pos: tuple[float, float] = (1000.0, 1.0)
    ris_pos: tuple[float, float] = (500.0, 150.0)
    n_elements: int = 50
    p_max: float = 1.0
    p_min: float = 0.0
    p_e: float = 5e-3
    t_s: float = 1.0
    sigma2: float = 3.9811e-11
    alpha: float = 1.0
    r_th: float = 5.0
    zeta: float = 0.0
    eta: float = 0.9
    path_loss_exponent: float = 2.0
    battery_capacity: float = 5.0
    battery_initial: float | None = None
    theta_mean: float = 2.0
    theta_var: float = 0.25
    theta_lo: float = 0.0
    theta_hi: float = 2.4
    n_slots: int = 10
    los_present: bool = True
    fading: str = "none"
    seed: int = 0

    def __post_init__(self):
        for name in ("user1_pos", "user2_pos", "ris_pos"):
            pos = tuple(float(v) for v in getattr(self, name))
            if len(pos) != 2 or not all(math.isfinite(v) for v in pos):
                raise ConfigError(f"{name} must be two finite coordinates")
            object.__setattr__(self, name, pos)
        if self.n_elements < 1:
            raise ConfigError("n_elements must be >= 1")
        if self.n_slots < 1:
            raise ConfigError("n_slots must be >= 1")
        if not 0 <= self.p_min <= self.p_max:
            raise ConfigError("need 0 <= p_min <= p_max")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")
        if not 0 <= self.eta <= 1:
            raise ConfigError("eta must lie in [0, 1]")
        if not 0 <= self.zeta <= 1:
            raise ConfigError("zeta must lie in [0, 1]")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be > 0")
        if self.p_e < 0 or self.t_s <= 0 or self.r_th < 0:
            raise ConfigError("p_e and r_th must be >= 0, t_s > 0")
        if self.path_loss_exponent < 0:
            raise ConfigError("path_loss_exponent must be >= 0")
        if self.battery_capacity < 0:
            raise ConfigError("battery_capacity must be >= 0")
        if self.theta_lo > self.theta_hi or self.theta_var < 0:
            raise ConfigError("need theta_lo <= theta_hi and theta_var >= 0")
        if self.fading not in FADING_MODES:
            raise ConfigError(f"fading must be one of {FADING_MODES}")
        init = self.initial_stored
        if not 0 <= init <= self.battery_capacity:
            raise ConfigError("battery_initial must lie in [0, battery_capacity]")

    @property
    def initial_stored(self) -> float:
        if self.battery_initial is None:
            return self.battery_capacity
        return self.battery_initial

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Direct-link amplitude and per-element cascade amplitudes.

    ``cascade[i, n]`` is the cascade magnitude through element ``n`` for the
    link *towards* user ``i`` (0-based users).
    """

    h_direct: float
    cascade: np.ndarray = field(repr=False)

    def __post_init__(self):
        cascade = np.array(self.cascade, dtype=float)
        if cascade.ndim != 2 or cascade.shape[0] != 2:
            raise ValueError("cascade must have shape (2, N)")
        if not (math.isfinite(self.h_direct) and self.h_direct >= 0):
            raise ValueError("h_direct must be finite and >= 0")
        if not np.all(np.isfinite(cascade)) or np.any(cascade < 0):
            raise ValueError("cascade entries must be finite and >= 0")
        cascade.setflags(write=False)
        object.__setattr__(self, "h_direct", float(self.h_direct))
        object.__setattr__(self, "cascade", cascade)

    @property
    def n_elements(self) -> int:
        return self.cascade.shape[1]

    def key(self) -> tuple:
        """Hashable fingerprint, used for memoising slot solves."""
        return (self.h_direct, self.cascade.tobytes())


def path_loss_amplitude(distance: float, exponent: float) -> float:
    """Amplitude gain ``d**(-exponent/2)``; the power gain is ``d**-exponent``."""
    if not distance > 0:
        raise ValueError(f"distance must be > 0, got {distance!r}")
    return float(distance ** (-exponent / 2.0))


def _distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def sample_channels(config: ScenarioConfig, rng: np.random.Generator) -> ChannelRealization:
    exp = config.path_loss_exponent
    h_direct = 0.0
    if config.los_present:
        h_direct = path_loss_amplitude(_distance(config.user1_pos, config.user2_pos), exp)
    a1 = path_loss_amplitude(_distance(config.user1_pos, config.ris_pos), exp)
    a2 = path_loss_amplitude(_distance(config.user2_pos, config.ris_pos), exp)
    n = config.n_elements
    if config.fading == "rayleigh":
        hops = rng.rayleigh(scale=1.0 / math.sqrt(2.0), size=(2, n))
        g = hops[0] * hops[1]
    else:
        g = np.ones(n)
    # Reciprocal links: the same element cascade serves both directions.
    row = (a1 * a2) * g
    return ChannelRealization(h_direct, np.vstack([row, row]))


def truncated_normal_mean(mean: float, var: float, lo: float, hi: float) -> float:
    """Closed-form mean of N(mean, var) truncated to [lo, hi]."""
    if var == 0:
        return float(min(max(mean, lo), hi))
    sd = math.sqrt(var)
    a, b = (lo - mean) / sd, (hi - mean) / sd
    return float(stats.truncnorm.mean(a, b, loc=mean, scale=sd))


def sample_energy_arrival(config: ScenarioConfig, rng: np.random.Generator) -> float:
    """One truncated-normal draw of the solar power arrival (Watts)."""
    lo, hi = config.theta_lo, config.theta_hi
    if not lo < hi:
        raise ValueError("energy arrival interval is degenerate (theta_lo >= theta_hi)")
    mean, var = config.theta_mean, config.theta_var
    if var == 0:
        return float(min(max(mean, lo), hi))
    sd = math.sqrt(var)
    a, b = (lo - mean) / sd, (hi - mean) / sd
    acceptance = stats.norm.cdf(b) - stats.norm.cdf(a)
    if acceptance < _MIN_ACCEPTANCE:
        u = rng.random()
        draw = float(stats.truncnorm.ppf(u, a, b, loc=mean, scale=sd))
        return min(max(draw, lo), hi)
    while True:
        draws = rng.normal(mean, sd, size=_BATCH)
        ok = draws[(draws >= lo) & (draws <= hi)]
        if ok.size:
            return float(ok[0])


# -- key=value config files -------------------------------------------------

_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
_POS_FIELDS = {"user1_pos", "user2_pos", "ris_pos"}
_INT_FIELDS = {"n_elements", "n_slots", "seed"}
_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def parse_value(key: str, text: str):
    """Convert the textual value of config field ``key`` to its Python type."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    text = text.strip()
    try:
        if key in _POS_FIELDS:
            parts = [float(v) for v in text.replace(" ", "").split(",")]
            if len(parts) != 2:
                raise ValueError
            return tuple(parts)
        if key in _INT_FIELDS:
            return int(text)
        if key == "los_present":
            return _BOOL_WORDS[text.lower()]
        if key == "fading":
            return text.lower()
        if key == "battery_initial" and text.lower() in ("", "none", "full"):
            return None
        return float(text)
    except (ValueError, KeyError):
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_config_text(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = parse_value(key, value)
    return (base or ScenarioConfig()).replace(**values)


def load_config(path: str | Path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    return parse_config_text(Path(path).read_text(), base)


def format_config(config: ScenarioConfig) -> str:
    """Inverse of :func:`parse_config_text`."""
    lines = []
    for name in _FIELDS:
        value = getattr(config, name)
        if name in _POS_FIELDS:
            text = f"{value[0]!r},{value[1]!r}"
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif value is None:
            text = "full"
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{name} = {text}")
    return "\n".join(lines) + "\n"
