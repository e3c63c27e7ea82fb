import numpy as np
import pytest

from quasipot.decompose import decompose
from quasipot.poly import VectorField

SYSTEMS = {
    "bistable": ["x1 - x1^3"],
    "quartic": ["-1 + 9*x1 - 2*x1^3 + 9*x2 - 2*x2^3", "1 - 11*x1 + 2*x1^3 + 11*x2 - 2*x2^3"],
    "ms_1_1": ["x1 - x1^3 - x1*x2^2", "-(1 + x1^2)*x2"],
    "ms_1_10": ["x1 - x1^3 - 10*x1*x2^2", "-(1 + x1^2)*x2"],
    "ms_2.5_1": ["x1 - x1^3 - x1*x2^2", "-2.5*(1 + x1^2)*x2"],
    "linear3": ["-5*x1 + 0.2*x3", "-1.5*x2 + 3*x3", "0.5*x1 - 5*x2 - x3"],
}

LINEAR3 = np.array([[-5.0, 0.0, 0.2], [0.0, -1.5, 3.0], [0.5, -5.0, -1.0]])


def field(name):
    return VectorField.parse(SYSTEMS[name])


_cache = {}


def decomposed(name):
    if name not in _cache:
        _cache[name] = decompose(field(name))
    return _cache[name]


@pytest.fixture(params=sorted(SYSTEMS))
def system_name(request):
    return request.param


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(criterion, ok, detail):
    ACCEPTANCE[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
