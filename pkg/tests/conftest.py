import pytest

from cyclegen import dataset as ds
from cyclegen.coupled import calibrate_hop_error, train_coupled
from cyclegen.fixture import make_fixture
from cyclegen.nn import Architecture, TrainConfig

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_data():
    """Profiles for a 2-cell training set and a 1-cell test set."""
    train = ds.segment(make_fixture(2, 12, 60, 21, 0.0033))
    test = ds.segment(make_fixture(1, 6, 60, 21, 0.0033, first_cell=3))
    return train, test


@pytest.fixture(scope="session")
def small_model(small_data):
    """A quickly trained voltage model at L=32, calibrated on the test cell."""
    train, test = small_data
    stats = ds.compute_stats(train, "voltage")
    pairs = ds.build_pairs(train, "voltage", 32, stats)
    model, hist = train_coupled(Architecture((32, 64, 64, 32)), pairs, TrainConfig(epochs=150, seed=3))
    calibrate_hop_error(model, ds.build_pairs(test, "voltage", 32, stats))
    return model, pairs, hist
