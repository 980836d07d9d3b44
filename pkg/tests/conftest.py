import numpy as np
import pytest

from mdpcfl.mdpc_code import keygen, plan_peeling
from mdpcfl.support_alloc import build_plan


@pytest.fixture(scope="session")
def toy_key():
    return keygen(100, 50, 8, seed=0)


@pytest.fixture(scope="session")
def toy_plan(toy_key):
    for attempt in range(50):
        plan = build_plan(100, 12, 4, 1, seed=attempt)
        if plan_peeling(toy_key.h, plan.global_set).success:
            return plan
    raise RuntimeError("no peelable toy plan")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def acceptance_log(capsys):
    """Record one pass/fail line per acceptance criterion."""

    def log(criterion, ok, detail):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {criterion}: {status}  {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
