import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "mate", deadline=None, max_examples=25, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("mate")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_box():
    from mate.conditions import SampleBox

    return SampleBox(z_count=3, p_count=5, direction_count=16, boundary_count=16, interior_count=3)


ACCEPTANCE = pytest.StashKey[list]()


class _Criterion:
    def __init__(self, log, number, title):
        self.log, self.number, self.title = log, number, title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        note = self.detail if ok else f"{self.detail} {exc_type.__name__}: {exc}".strip()
        self.log.append((self.number, ok, self.title, note))
        return False


@pytest.fixture
def criterion(request):
    log = request.config.stash.setdefault(ACCEPTANCE, [])

    def make(number, title):
        return _Criterion(log, number, title)

    return make


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(ACCEPTANCE, [])
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, title, note in sorted(log):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {note}")
