import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: one line per criterion at the end of the session

CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    num, title = mark.args
    passed = rep.passed and not hasattr(rep, "wasxfail")
    detail = getattr(item, "criterion_detail", "")
    CRITERIA[num] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        title, passed, detail = CRITERIA[num]
        line = f"criterion {num:2d} {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion")
