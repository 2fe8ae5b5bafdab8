import numpy as np
import pytest

from starris.channel import sample_channels
from starris.config import SystemConfig


def small_config(**kw) -> SystemConfig:
    base = dict(n_tx=4, n_users=2, n_ris=2, n_elems_per_ris=2, n_users_t_region=1)
    base.update(kw)
    return SystemConfig(**base)


@pytest.fixture
def cfg():
    return small_config()


@pytest.fixture
def chan(cfg):
    return sample_channels(cfg, index=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting --------------------------------------------------------
# Tests marked ``criterion(n)`` record one line each; the lines are printed at the
# end of the session.  A test that errors before recording is reported as FAIL.

_CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    number = marker.args[0]

    def record(ok: bool, detail: str):
        _CRITERIA[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and rep.failed and marker.args[0] not in _CRITERIA:
        _CRITERIA[marker.args[0]] = (False, f"error in {rep.when}: {call.excinfo.exconly() if call.excinfo else ''}"[:300])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
