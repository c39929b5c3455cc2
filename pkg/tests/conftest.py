import numpy as np
import pytest
from hypothesis import settings

from prism.env import BrakingEnv, CartPoleEnv, EnvParams

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def braking():
    return BrakingEnv()


@pytest.fixture
def cartpole():
    return CartPoleEnv()


@pytest.fixture
def calm():
    """Noise-free nominal plant."""
    return EnvParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def report(request):
    """Record one verdict line per acceptance criterion; printed in the terminal summary."""

    def _report(n: int, ok: bool, detail: str):
        request.config._acceptance[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
