import numpy as np
import pytest
from hypothesis import settings

from hermite_flow.basis import HermiteExpansion

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_expansion(rng, dim=1, N=8, s=2.0):
    grids = np.meshgrid(*([np.arange(N + 1)] * dim), indexing="ij")
    return HermiteExpansion(rng.standard_normal((N + 1,) * dim) * (1.0 + sum(grids)) ** (-s))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` prints and records one PASS/FAIL line, then asserts ``ok``."""

    def record(n: int, ok: bool, detail: str = ""):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        ACCEPTANCE[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
