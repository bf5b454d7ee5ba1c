import numpy as np
import pytest

from hetnet_mro.network import compute_rsrp_map
from hetnet_mro.pipeline import build_map
from hetnet_mro.scenarios import line_scenario, street_htn_scenario, race_example_matrices


@pytest.fixture(scope="session")
def line():
    return line_scenario()


@pytest.fixture(scope="session")
def line_map(line):
    return compute_rsrp_map(line.cells, line.grid)


@pytest.fixture(scope="session")
def race_examples():
    return race_example_matrices(5.0)


@pytest.fixture(scope="session")
def street():
    return street_htn_scenario(seed=0)


@pytest.fixture(scope="session")
def street_map(street):
    return build_map(street)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mods = [m for name, m in sys.modules.items() if name.endswith("test_acceptance") and hasattr(m, "RESULTS")]
    if not mods or not mods[0].RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mods[0].RESULTS):
        terminalreporter.write_line(mods[0].RESULTS[n])
