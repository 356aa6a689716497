import sys

import numpy as np
import pytest

from raincast.tensor import backend


@pytest.fixture(params=backend.available())
def kernel_backend(request):
    """Run the test once per importable kernel backend."""
    with backend.use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
