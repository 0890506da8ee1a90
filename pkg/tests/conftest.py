import numpy as np
import pytest

from forcereg.meshgen import box_mesh, liver_like_mesh, unit_tet


@pytest.fixture(scope="session")
def tet():
    return unit_tet()


@pytest.fixture(scope="session")
def small_mesh():
    # ~100 tets, jittered so elements are not all congruent
    return box_mesh((4, 4, 3), (30.0, 30.0, 20.0), jitter=0.15, seed=3)


@pytest.fixture(scope="session")
def box_small():
    return box_mesh((7, 5, 4), (60.0, 40.0, 30.0), jitter=0.1, seed=1)


@pytest.fixture(scope="session")
def bar_mesh():
    return box_mesh((25, 5, 8), (120.0, 20.0, 35.0))


@pytest.fixture(scope="session")
def liver():
    return liver_like_mesh()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    num = int(name.split("_")[2])
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _CRITERIA[num] = (outcome, name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        outcome, name = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d}: {outcome}  ({name})")
