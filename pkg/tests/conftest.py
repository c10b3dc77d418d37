import numpy as np
import pytest

from vgpmil.bags import Bag, MilDataset


def grid_bag(bag_id, label, height, width, dim=2, rng=None, instance_labels=None):
    rng = rng or np.random.default_rng(0)
    rows, cols = np.divmod(np.arange(height * width), width)
    return Bag(bag_id, label, rng.standard_normal((height * width, dim)),
               coords=np.column_stack([rows, cols]), instance_labels=instance_labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset():
    """Six 3x3 bags in 2-D, three positive with one planted positive corner."""
    rng = np.random.default_rng(7)
    bags = []
    for b in range(6):
        label = b % 2
        h = np.zeros(9, dtype=np.int64)
        if label:
            h[[0, 1, 3]] = 1
        X = np.where(h[:, None] == 1, 1.5, -1.5) + 0.5 * rng.standard_normal((9, 2))
        rows, cols = np.divmod(np.arange(9), 3)
        bags.append(Bag(f"b{b}", label, X, np.column_stack([rows, cols]), h))
    return MilDataset(bags)


# --- acceptance summary -------------------------------------------------------

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        n, title = mark.args
        _CRITERIA.append((n, title, report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, outcome, secs in sorted(_CRITERIA):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title} ({secs:.1f}s)")
