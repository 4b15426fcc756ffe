import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "shellrg",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("shellrg")

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record(request):
    """``record(criterion, part, ok, detail)`` collects acceptance outcomes."""
    store = request.config.stash.setdefault(_ACCEPTANCE, {})

    def _record(criterion: int, part: str, ok: bool, detail: str = "") -> bool:
        store.setdefault(criterion, []).append((part, bool(ok), detail))
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(store):
        parts = store[criterion]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"{verdict} criterion {criterion}")
        for part, ok, detail in parts:
            terminalreporter.write_line(f"    [{'ok' if ok else 'FAIL'}] {part}: {detail}")
