import numpy as np
import pytest

from net2milp.fixtures import load_digits
from net2milp.train import Dataset, TrainConfig, init_network, train

# recipe for the ten-class fixture net (see README: training recipe)
FIXTURE_RECIPE = TrainConfig(learning_rate=0.1, epochs=3000, seed=0, bias_init=0.1, output_scale=0.0)

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        info = getattr(report, "_criterion", None)
        if info is not None:
            _criteria[info] = report.outcome


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep._criterion = (mark.args[0], mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (n, title), outcome in sorted(_criteria.items()):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}  {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def digits():
    return load_digits()


@pytest.fixture(scope="session")
def fixture_net(digits):
    """Ten-class dense net trained on the bundled 8x8 digits."""
    images, labels = digits
    data = Dataset.from_labels(images, labels, 10)
    net = init_network("dense-12", (8, 8), 10, FIXTURE_RECIPE)
    net, history = train(net, data, FIXTURE_RECIPE)
    return net, data, history


@pytest.fixture(scope="session")
def two_class_net():
    images, labels = load_digits([0, 1])
    data = Dataset.from_labels(images, labels, 2)
    cfg = TrainConfig(learning_rate=0.05, epochs=500, seed=0)
    net, history = train(init_network("dense-16-8", (8, 8), 2, cfg), data, cfg)
    return net, data, history
