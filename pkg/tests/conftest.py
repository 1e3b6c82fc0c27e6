from __future__ import annotations

import pytest

from driftlab.fields import analytic_field_catalog, coefficient_catalog
from driftlab.grid import GridSpec

CRITERIA = {
    1: "heat-kernel baseline",
    2: "exact discrete invariants",
    3: "tilted energy",
    4: "upper envelopes",
    5: "two-sided Gaussian",
    6: "cone mass",
    7: "Riccati oracles",
    8: "Gaussian-measure identities",
    9: "Nash functional",
    10: "regularity",
    11: "scaling laws",
    12: "determinism and reporting",
}

_OUTCOMES: dict[int, list] = {}
_DETAILS: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number): acceptance criterion exercised by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _OUTCOMES.setdefault(num, []).append(rep.passed)


@pytest.fixture
def detail(request):
    """Append a one-line summary to the criterion the test is marked with."""
    marker = request.node.get_closest_marker("criterion")

    def add(text: str) -> None:
        if marker is not None:
            _DETAILS.setdefault(marker.args[0], []).append(text)

    return add


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for num, title in CRITERIA.items():
        runs = _OUTCOMES.get(num)
        if runs is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(runs) else "FAIL"
        extra = "; ".join(_DETAILS.get(num, []))
        terminalreporter.write_line(f"criterion {num:2d} {title:28s} {status}" + (f"  ({extra})" if extra else ""))


@pytest.fixture
def grid2():
    return GridSpec(2, 32, 8.0)


@pytest.fixture
def vortex2(grid2):
    entry = analytic_field_catalog("cellular-vortex", {"amplitude": 1.0, "wavenumber": 2 * 3.141592653589793 / 8.0},
                                   grid2)
    return entry.field


@pytest.fixture
def identity2(grid2):
    return coefficient_catalog("identity", None, grid2)
