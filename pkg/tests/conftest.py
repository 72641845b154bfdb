import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repo", deadline=None, max_examples=40)
settings.load_profile("repo")

# acceptance criterion -> list of (check, passed, detail)
ACCEPTANCE: dict[str, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record an acceptance check; returns ``record(number, check, passed, detail)``."""
    def record(number, check, passed, detail=""):
        ACCEPTANCE.setdefault(str(number), []).append((check, bool(passed), detail))
        print(f"criterion {number} [{check}]: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(ACCEPTANCE, key=int):
        checks = ACCEPTANCE[number]
        ok = all(p for _, p, _ in checks)
        tr.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}")
        for check, passed, detail in checks:
            tr.write_line(f"    {'pass' if passed else 'FAIL'}  {check}: {detail}")
