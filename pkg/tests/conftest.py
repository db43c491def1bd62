import pytest

from vmdetect.data import make_moons
from vmdetect.nn import TrainConfig, train_sgd


@pytest.fixture(scope="session")
def moons():
    return make_moons(600, 0.1, seed=0)


@pytest.fixture(scope="session")
def moons_net(moons):
    X, y = moons.subset("train")
    return train_sgd(X, y, [2, 32, 32, 2], TrainConfig(0.1, 100, 32, 0))


_CRITERIA: dict[str, str] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args[0]))


def pytest_runtest_logreport(report):
    name = dict(report.user_properties).get("criterion")
    if name is None:
        return
    failed = report.outcome == "failed"
    if report.when == "call" or failed:
        _CRITERIA[name] = "FAIL" if failed or _CRITERIA.get(name) == "FAIL" else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in _CRITERIA.items():
        terminalreporter.write_line(f"{verdict}  {name}")
