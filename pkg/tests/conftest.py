import numpy as np
import pytest

from risopt.scenario import ScenarioConfig, sample_channels

# Lines appended by test_acceptance.py, echoed in the terminal summary so the
# per-criterion verdicts appear in captured output as well.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    return ScenarioConfig(n_elements=4, r_th=5.0)


@pytest.fixture
def small_channels(small_config, rng):
    return sample_channels(small_config, rng)
