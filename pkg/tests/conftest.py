import math

import numpy as np
import pytest

from ehrenfest.kernel import GridSpec, RateKernel, nodes


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def unit_kernel():
    return RateKernel.constant(1.0)


@pytest.fixture
def product_kernel():
    return RateKernel.product(lambda x: 1.0 + x, lambda y: 2.0 - y)


def table_kernel(m):
    x = nodes(m)
    tab = 1.0 + 0.5 * np.sin(2 * math.pi * x)[:, None] * np.cos(2 * math.pi * x)[None, :] + 0.25 * np.outer(x, x)
    return RateKernel.table(tab)


@pytest.fixture
def grid200():
    return GridSpec(200)
