import numpy as np
import pytest

from sfmc.model import FactorModel, normalize_factors


def random_model(rng, n1, n2, ranks, scale=1.0):
    """Random factor model brought to canonical form."""
    d_s, d_m, d_t = ranks
    g = lambda *s: scale * rng.normal(size=s)
    fm = FactorModel(g(n1, d_s), g(n1, d_m), g(n1, d_s), g(n1, d_t),
                     rng.normal(size=(n2, d_s)), rng.normal(size=(n2, d_m)),
                     rng.normal(size=(n2, d_t)))
    return normalize_factors(fm)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# One summary line per acceptance criterion. Tests opt in with
# @pytest.mark.criterion(k); a criterion passes when all its tests pass.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number")


def pytest_runtest_logreport(report):
    marks = getattr(report, "_criterion", None)
    if marks is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        state = _CRITERIA.setdefault(marks, [])
        state.append((report.nodeid, report.outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep._criterion = int(mark.args[0])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        outcomes = [o for _, o in _CRITERIA[k]]
        if any(o == "failed" for o in outcomes):
            verdict = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        names = ", ".join(nid.split("::")[-1] for nid, _ in _CRITERIA[k])
        tr.write_line("criterion %2d: %s  (%s)" % (k, verdict, names))
