import sys
from pathlib import Path

import numpy as np
import pytest

from provlab.mdp import MdpModel

sys.path.insert(0, str(Path(__file__).parent))

_acceptance: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is None or rep.when != "call" and not rep.failed:
        return
    name = m.args[0]
    _acceptance.setdefault(name, [])
    if rep.failed or rep.when == "call":
        _acceptance[name].append("fail" if rep.failed else "pass")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, results in _acceptance.items():
        status = "PASS" if results and all(r == "pass" for r in results) else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture
def chain():
    """s0 -a-> {g: .5, s1: .5};  s1 -a-> g;  G = {g}."""
    trans = {0: [{2: 0.5, 1: 0.5}], 1: [{2: 1.0}], 2: [{2: 1.0}]}
    return MdpModel.from_transitions(3, trans, [False, False, True], 2, states=("s0", "s1", "g"))


@pytest.fixture
def chain2():
    """The chain with a second action a' at s0 that self-loops."""
    trans = {0: [{2: 0.5, 1: 0.5}, {0: 1.0}], 1: [{2: 1.0}], 2: [{2: 1.0}]}
    return MdpModel.from_transitions(3, trans, [False, False, True], 2, states=("s0", "s1", "g"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
