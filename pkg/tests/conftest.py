import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from advsep.model import NetworkParams, init_network
from advsep.numerics import make_rng

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def small_net():
    return init_network(16, 32, make_rng(7))


def non_kink_inputs(p, n, rng, margin=1e-4):
    """Random inputs whose pre-activations all stay ``margin`` away from zero."""
    out = []
    while len(out) < n:
        x = rng.standard_normal(p.d)
        if np.min(np.abs(p.W @ x)) > margin:
            out.append(x)
    return np.array(out)


def identity_net(W, a):
    return NetworkParams(np.asarray(W, dtype=float), np.asarray(a, dtype=float))


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])
