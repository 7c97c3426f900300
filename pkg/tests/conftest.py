import sys
import time
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from t4d.primitives import icosphere, plane_grid, synthetic_head  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def head():
    return synthetic_head()


@pytest.fixture(scope="session")
def small_head():
    return synthetic_head(15, 19)


@pytest.fixture(scope="session")
def sphere():
    return icosphere(2)


@pytest.fixture(scope="session")
def grid():
    return plane_grid(9)


@pytest.fixture
def criterion():
    """Context manager recording one PASS/FAIL line per acceptance criterion.

    The body may set ``state["detail"]``; any exception marks the criterion FAIL.
    """
    @contextmanager
    def run(number, title):
        state = {"detail": ""}
        start = time.perf_counter()
        try:
            yield state
        except BaseException as exc:
            msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            ACCEPTANCE_LINES.append((number, f"FAIL {number:2d}. {title}: {msg}"))
            print(ACCEPTANCE_LINES[-1][1])
            raise
        took = time.perf_counter() - start
        ACCEPTANCE_LINES.append(
            (number, f"PASS {number:2d}. {title}: {state['detail']} [{took:.2f} s]"))
        print(ACCEPTANCE_LINES[-1][1])
    return run


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
