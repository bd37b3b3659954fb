import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cyclegen.metrics import CycleMetrics, MetricsReport, cycle_trend, mae, mse, report, rmse


def brute(pred, truth):
    n = len(pred)
    se = ae = 0.0
    for y, x in zip(pred, truth):
        se += (y - x) ** 2
        ae += abs(y - x)
    return se / n, ae / n, math.sqrt(se / n)


def test_zero_error():
    v = [1.0, -2.0, 3.5]
    assert mse(v, v) == mae(v, v) == rmse(v, v) == 0.0


def test_hand_example():
    assert mse([1, 2], [2, 4]) == 2.5
    assert mae([1, 2], [2, 4]) == 1.5
    assert rmse([1, 2], [2, 4]) == math.sqrt(2.5)


def test_length_mismatch():
    for f in (mse, mae, rmse):
        with pytest.raises(ValueError):
            f([1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            f([], [])


def test_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 50))
        p, t = rng.normal(size=n), rng.normal(size=n)
        b = brute(p, t)
        assert abs(mse(p, t) - b[0]) < 1e-12
        assert abs(mae(p, t) - b[1]) < 1e-12
        assert abs(rmse(p, t) - b[2]) < 1e-12


finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=40))
def test_mae_le_rmse_and_symmetry(pairs):
    p = np.array([a for a, _ in pairs])
    t = np.array([b for _, b in pairs])
    assert mae(p, t) <= rmse(p, t) * (1 + 1e-12) + 1e-12
    assert mse(p, t) == pytest.approx(mse(t, p), rel=1e-12, abs=1e-15)
    perm = np.random.default_rng(len(pairs)).permutation(len(pairs))
    assert mae(p[perm], t[perm]) == pytest.approx(mae(p, t), rel=1e-12, abs=1e-15)


def test_report_aggregate_is_mean_of_cycles():
    rep = report([(1, np.array([0.0, 0.0]), np.array([0.0, 0.0])), (2, np.array([1.0, 3.0]), np.array([0.0, 0.0]))])
    assert rep.per_cycle[1].mse == 5.0 and rep.per_cycle[1].rmse == math.sqrt(5.0)
    assert rep.aggregate == {"mse": 2.5, "mae": 1.0, "rmse": math.sqrt(5.0) / 2}
    # averaged per-cycle rmse falls below sqrt of averaged mse
    assert rep.aggregate["rmse"] < math.sqrt(rep.aggregate["mse"])


def test_single_cycle_aggregate_equals_cycle():
    rep = report([(4, np.array([1.0, 2.0]), np.array([2.0, 4.0]))])
    c = rep.per_cycle[0]
    assert rep.aggregate == {"mse": c.mse, "mae": c.mae, "rmse": c.rmse}
    assert rep.n == 2


def test_report_csv():
    rep = report([(1, np.array([1.0]), np.array([1.5]))])
    assert rep.to_csv() == "cycle_index,mse,mae,rmse\n1,0.25,0.5,0.5\n"


def test_cycle_trend():
    flat = MetricsReport([CycleMetrics(c, 0.1, 0.2, 0.3) for c in (1, 2, 3)], n=4)
    assert cycle_trend(flat) == {"mse": 0.0, "mae": 0.0, "rmse": 0.0}
    rising = MetricsReport([CycleMetrics(c, 1.0, 1.0, float(c)) for c in (1, 2, 3)], n=4)
    assert cycle_trend(rising)["rmse"] == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        cycle_trend(MetricsReport([CycleMetrics(1, 0, 0, 0)], n=1))


def test_empty_report_rejected():
    with pytest.raises(ValueError):
        report([])
