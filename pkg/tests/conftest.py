import numpy as np
import pytest

from privdetect.bench_cli import Scenario, build_pendulum_benchmark
from privdetect.sysmodel import sinusoidal_ramp_attack


@pytest.fixture(scope="session")
def pendulum():
    return build_pendulum_benchmark()


@pytest.fixture(scope="session")
def scenario(pendulum):
    net, gains = pendulum
    return Scenario(net, gains, 0.01, sinusoidal_ramp_attack(3), 2)


@pytest.fixture(scope="session")
def context(scenario):
    return scenario.context(5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, scale=1.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * (scale * rng.uniform(0.2, 2.0, n))) @ Q.T


ACCEPTANCE_LINES = []


def pytest_addoption(parser):
    parser.addoption("--acceptance-trials", type=int, default=None,
                     help="cap Monte Carlo sizes in the acceptance suite (default: full sizes)")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
