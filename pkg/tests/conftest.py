import re

import numpy as np
import pytest

from dynfl.instance import make_instance

_ACCEPTANCE: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = re.match(r"test_criterion_(\d+)", item.name)
    if not m or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    n = int(m.group(1))
    detail = dict(item.user_properties).get("detail", "")
    _ACCEPTANCE[n] = {"passed": rep.passed, "detail": detail, "name": item.name}


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        r = _ACCEPTANCE[n]
        tr.write_line(f"criterion {n}: {'PASS' if r['passed'] else 'FAIL'}  {r['detail']}")


@pytest.fixture
def detail(record_property):
    """Attach a one-line summary to the acceptance line of the running test."""
    def put(text: str):
        record_property("detail", text)
    return put


@pytest.fixture
def one_pair():
    """One facility f=5, one client at distance 2, T=1."""
    return make_instance(np.full((1, 1, 1), 2.0), np.array([5.0]))


def four_vertex_prep():
    """Clients j1, j2 and copies i1, i2 with edges j1-i1, j1-i2, j2-i2.

    Only the graph matters here; j2's row does not sum to one.
    """
    from dynfl.preprocess import PreprocessedSolution

    conn = np.zeros((1, 2, 2), dtype=bool)
    conn[0, 0, 0] = conn[0, 1, 0] = conn[0, 1, 1] = True
    return PreprocessedSolution(("f0", "f1"), ("c0", "c1"), np.array([0, 1]),
                                np.array([0.5, 0.5]), np.ones((1, 2), dtype=bool), conn,
                                np.zeros((0, 2, 2)))
