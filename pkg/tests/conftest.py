import numpy as np
import pytest


def random_state(rng, batch=()):
    z = rng.normal(size=batch + (4,)) + 1j * rng.normal(size=batch + (4,))
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_RESULTS: dict = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (title, bool(passed), detail)
    print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title} ({detail})")
