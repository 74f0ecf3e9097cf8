"""Shared fitted objects; the controller syntheses take a few seconds each."""
import numpy as np
import pytest
from hypothesis import settings

from twiproa import TwipParams, linear_model
from twiproa.certification import build_invariant_set
from twiproa.controllers import CTMPCController, LQRController, MPCController

settings.register_profile("pkg", deadline=None, max_examples=50)
settings.load_profile("pkg")


@pytest.fixture(scope="session")
def params():
    return TwipParams()


@pytest.fixture(scope="session")
def model(params):
    return linear_model(params)


@pytest.fixture(scope="session")
def lqr(model):
    return LQRController().fit(model)


@pytest.fixture(scope="session")
def mpc(model):
    return MPCController().fit(model)


@pytest.fixture(scope="session")
def ctmpc(model):
    return CTMPCController().fit(model)


@pytest.fixture(scope="session")
def cset(lqr):
    return build_invariant_set(lqr.A_cl_, lqr.K_)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(tag, passed, detail):
        line = f"{tag} {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        request.config.acceptance_lines.append(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines):
            terminalreporter.write_line(line)
