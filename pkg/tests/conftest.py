import numpy as np
import pytest

from romdot.grid import MediumParams, assemble_system, build_grid, default_layout
from romdot.pals import PalsConfig, Parametrization, bump_grid


def make_system(n=17, n_s=4, n_d=4, dim=2, medium=MediumParams(), mu_field=None):
    if dim == 2:
        g = build_grid(2, n, (1.0, 1.0))
    else:
        g = build_grid(3, n, (1.0, 1.0, 2.0))
    return g, assemble_system(g, medium, default_layout(g, n_s, n_d), mu_field)


@pytest.fixture
def small2d():
    return make_system(9, 3, 3)


@pytest.fixture
def sys17():
    return make_system(17, 4, 4)


@pytest.fixture
def pals2d():
    g, s = make_system(17, 4, 4)
    par = Parametrization(g, PalsConfig(mu_high=2.0))
    p = bump_grid(g, 2, alpha=0.4).to_vector()
    return g, s, par, p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; a test that dies early is logged as FAIL."""
    def record(number, title, ok, detail=""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    yield record
    key = getattr(request.node, "acceptance_number", None)
    if key is not None and key not in ACCEPTANCE_LINES:
        ACCEPTANCE_LINES[key] = f"criterion {key:2d} FAIL  {request.node.name}: raised before reporting"


def pytest_runtest_setup(item):
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        item.acceptance_number = marker.args[0]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
