import warnings

import pytest

warnings.filterwarnings("ignore", module="numba")

from hml import kernels  # noqa: E402
from hml.fractal import build_ifs  # noqa: E402
from hml.lattice import build_lattice  # noqa: E402

ACCEPTANCE_LINES = []

BACKENDS = ["numpy"] + (["numba"] if kernels._compiled is not None else [])


@pytest.fixture(scope="session")
def quarter():
    return build_ifs("corner_cantor_2d", 0.25)


@pytest.fixture(scope="session")
def fifth():
    return build_ifs("corner_cantor_2d", 0.2)


@pytest.fixture(scope="session")
def lat6(quarter):
    return build_lattice(quarter, 6)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
