"""Energy-minimal scheduling for a battery-powered RIS relaying a two-way link.

Per slot, each surface element is switched off or reflects towards one of the
two users; both users pick transmit powers. The package solves that problem
exactly (linearized MILP with branch-and-bound) or with a master/auxiliary
decomposition, and runs slot-by-slot battery simulations and sweeps.
"""

from .benders import AuxSolution, BendersTrace, MasterSolution, benders_iterate, solve_auxiliary, solve_master
from .milp import LinearizedProgram, SolveReport, build_program, exhaustive_oracle, solve_exact
from .physics import (
    BatteryState,
    ElementAssignment,
    PowerAllocation,
    SlotOutcome,
    achievable_rate,
    check_feasible,
    evaluate_slot,
)
from .scenario import ChannelRealization, ConfigError, ScenarioConfig, load_config, sample_channels
from .sim import EpisodeResult, SweepPoint, run_episode, run_sweep, solve_slot

__all__ = [
    "AuxSolution", "BatteryState", "BendersTrace", "ChannelRealization", "ConfigError",
    "ElementAssignment", "EpisodeResult", "LinearizedProgram", "MasterSolution",
    "PowerAllocation", "ScenarioConfig", "SlotOutcome", "SolveReport", "SweepPoint",
    "achievable_rate", "benders_iterate", "build_program", "check_feasible", "evaluate_slot",
    "exhaustive_oracle", "load_config", "run_episode", "run_sweep", "sample_channels",
    "solve_auxiliary", "solve_exact", "solve_master", "solve_slot",
]
