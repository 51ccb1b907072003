import re

import numpy as np
import pytest

from molmimo.channel_model import ChannelModel, ModelParams
from molmimo.topology import make_topology

# reference parameters for the selected topology (d=2, h=2, r_r=4, D=50)
OWN_REF = (0.9155, 0.5236, 0.5476)
CROSS_REF = (0.1534, 0.2780, 0.5363)


@pytest.fixture(scope="session")
def selected():
    return make_topology(2.0, 2.0, 4.0, 50.0)


@pytest.fixture(scope="session")
def ref_channel(selected):
    return ChannelModel(selected, ModelParams(*OWN_REF), ModelParams(*CROSS_REF))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(re.match(r"\d+", k).group()), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}")
