import numpy as np
import pytest

from fcgs.neural import gen_test_weights
from fcgs.synthetic import noise_scene, smooth_scene


@pytest.fixture(scope="session")
def weights():
    return gen_test_weights(7)


@pytest.fixture(scope="session")
def small_scene():
    return smooth_scene(2000, seed=1)


@pytest.fixture(scope="session")
def noisy_scene():
    return noise_scene(500, seed=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ------------------------------------------------------------ acceptance

_VERDICTS: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    ok, seen = _VERDICTS.get(n, (True, title))
    _VERDICTS[n] = (ok and not rep.failed and not rep.skipped, seen)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, title = _VERDICTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n}: {title}")
