import os

import pytest

from rllgbp.constraint_model import parse_spec
from rllgbp.free_energy import capacity_region_graph


@pytest.fixture
def hard_squares():
    return parse_spec("1,inf")


@pytest.fixture
def fig5_graph(hard_squares):
    """The 3x3 (1, inf) region graph: four 2x2 windows and their intersections."""
    return capacity_region_graph(hard_squares, (3, 3))


# -- slow tier -------------------------------------------------------------------------

def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true",
                     help="also run the long reproduction runs (or set RLLGBP_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow") or os.environ.get("RLLGBP_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow tier: pass --run-slow or set RLLGBP_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


# -- acceptance report ---------------------------------------------------------------

ACCEPTANCE: dict = {}
CRITERIA = [f"A{i}" for i in range(1, 11)]


def record(criterion: str, passed: bool, detail: str):
    """Keep the worst verdict per criterion, with every detail string."""
    entry = ACCEPTANCE.setdefault(criterion, {"passed": True, "details": []})
    entry["passed"] &= bool(passed)
    entry["details"].append(("ok " if passed else "FAIL ") + detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in CRITERIA:
        entry = ACCEPTANCE.get(name)
        if entry is None:
            terminalreporter.write_line(f"{name}: NOT RUN (slow tier skipped or test deselected)")
            continue
        verdict = "PASS" if entry["passed"] else "FAIL"
        terminalreporter.write_line(f"{name}: {verdict} | " + "; ".join(entry["details"]))
