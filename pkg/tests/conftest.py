import numpy as np
import pytest

from orthoboot import rng as rngmod


@pytest.fixture
def gen():
    """A fresh generator per test, fixed seed."""
    return rngmod.stream(rngmod.derive_key(12345), rngmod.LANE_MISC)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion(request):
    def record(number, name, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {name}" + (f" ({detail})" if detail else "")
        request.config._acceptance_lines.append(line)
        print(line)
        return ok
    return record


def allclose(a, b, tol):
    return np.all(np.abs(np.asarray(a) - np.asarray(b)) <= tol)
