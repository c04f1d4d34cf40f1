import math
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from symplab.action import build_action, mean_actions
from symplab.forms import standard_primitive
from symplab.geometry import Annulus, Disk
from symplab.maps import RadialTwist, RigidRotation
from symplab.orbits import find_orbits

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TWIST = [math.pi, -math.pi]


@pytest.fixture(scope="session")
def disk():
    return Disk(1.0)


@pytest.fixture(scope="session")
def annulus():
    return Annulus(1.0)


@pytest.fixture(scope="session")
def twist(disk):
    return RadialTwist(disk, TWIST)


@pytest.fixture(scope="session")
def twist_profile(twist, disk):
    return build_action(twist, standard_primitive(disk), 0)


@pytest.fixture(scope="session")
def twist_orbits(twist):
    return find_orbits(twist, 3, seeds=8)


@pytest.fixture(scope="session")
def twist_records(twist_profile, twist_orbits):
    return mean_actions(twist_profile, twist_orbits)


@pytest.fixture(scope="session")
def rotation3(disk):
    return RigidRotation(disk, 2 * math.pi / 3)


@pytest.fixture(scope="session")
def rotation3_orbits(rotation3):
    return find_orbits(rotation3, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance") and getattr(mod, "RESULTS", None):
            terminalreporter.section("acceptance criteria")
            for n in sorted(mod.RESULTS):
                terminalreporter.write_line(mod.format_result(n))
