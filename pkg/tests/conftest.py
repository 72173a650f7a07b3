"""Shared, session-scoped constructions (each takes a few seconds)."""
import pytest

from spherecollapse.construction import ApproxSolution, construct, tune_q2
from spherecollapse.profiles import make_rho_grid


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """record(n, part, ok, detail, literal=True): log one check of criterion n.

    A criterion is PASS only if every literal part passed; supplementary
    parts are listed alongside for context."""
    store = request.config.stash[ACCEPTANCE]

    def record(n, part, ok, detail="", literal=True):
        store.setdefault(n, []).append((part, bool(ok), detail, literal))
        print(f"criterion {n} [{part}]: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        parts = store[n]
        lit = [ok for _, ok, _, literal in parts if literal]
        verdict = "PASS" if lit and all(lit) else "FAIL"
        detail = "; ".join(
            f"{part}{'' if literal else ' (supplementary)'}: {'ok' if ok else 'fail'}{' ' + d if d else ''}"
            for part, ok, d, literal in parts
        )
        terminalreporter.write_line(f"criterion {n:2d}: {verdict} | {detail}")


@pytest.fixture(scope="session")
def grid():
    return make_rho_grid()


@pytest.fixture(scope="session")
def res2(grid):
    return construct(2, grid)


@pytest.fixture(scope="session")
def res3(grid):
    return construct(3, grid)


@pytest.fixture(scope="session")
def tuned2(grid):
    return tune_q2(0.0, 2, grid)


@pytest.fixture(scope="session")
def tuned3(grid):
    return tune_q2(0.0, 3, grid)


@pytest.fixture(scope="session")
def tuned3_e1(grid):
    return tune_q2(1.0, 3, grid)


@pytest.fixture(scope="session")
def approx2(tuned2):
    return ApproxSolution(tuned2.result)


@pytest.fixture(scope="session")
def approx3(tuned3):
    return ApproxSolution(tuned3.result)
