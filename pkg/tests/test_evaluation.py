import datetime as dt
import json
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from realrisk.evaluation import (
    EvaluationConfig,
    UtilityConfig,
    aggregate_losses,
    average_realized_utility,
    diebold_mariano,
    evaluate,
    losses,
    realized_utility,
)
from realrisk.forecast import FORECAST_COLUMNS

positive = st.floats(1e-4, 1e3)


def two_branch_oracle(rv, fv, sr=0.4, gamma=2.0):
    if math.sqrt(fv) >= sr / gamma:
        return sr * sr / gamma * (math.sqrt(rv / fv) - 0.5 * rv / fv)
    return sr * math.sqrt(rv) - gamma / 2 * rv


def forecast_table(models, n=200, seed=0, h=1):
    rng = np.random.default_rng(seed)
    days = [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(n)]
    rv = np.exp(rng.normal(-1, 0.5, n))
    rows = []
    for m, noise in models.items():
        fv = rv * np.exp(rng.normal(0, noise, n))
        for d, r, f in zip(days, rv, fv):
            rows.append((d, m, h, math.log(f), f, r, False, days[0], False))
    return pd.DataFrame(rows, columns=list(FORECAST_COLUMNS))


def test_perfect_forecast_losses():
    for rv in (0.3, 1.0, 7.5):
        mse, hr, ql = losses({"realized_var": rv, "forecast_var": rv})
        assert mse == 0 and hr == 0
        assert ql == pytest.approx(math.log(rv) + 1, rel=1e-15)


def test_double_forecast_losses():
    mse, hr, ql = losses({"realized_var": 1.0, "forecast_var": 2.0})
    assert (mse, hr) == (1.0, 1.0)
    assert ql == pytest.approx(math.log(2) + 0.5, rel=1e-15)
    with pytest.raises(ValueError):
        losses({"realized_var": 1.0, "forecast_var": 0.0})


def test_hrmse_is_root_of_mean():
    rv = np.array([1.0, 2.0, 4.0])
    fv = np.array([2.0, 2.0, 2.0])
    agg = aggregate_losses(rv, fv)
    assert agg["hrmse"] == pytest.approx(math.sqrt((1 + 0 + 0.25) / 3))
    assert agg["mse"] == pytest.approx((1 + 0 + 4) / 3)


@given(positive)
def test_qlike_grid_minimum_at_truth(rv):
    grid = rv * np.exp(np.linspace(-2, 2, 4001))
    q = np.log(grid) + rv / grid
    assert grid[np.argmin(q)] == pytest.approx(rv, rel=2e-3)


def test_dm_identical_losses():
    x = np.random.default_rng(0).normal(size=50)
    res = diebold_mariano(x, x)
    assert (res.statistic, res.p_value) == (0.0, 1.0)


def test_dm_constant_shift_favours_a():
    a = np.random.default_rng(1).exponential(size=500)
    res = diebold_mariano(a, a + 0.1)
    assert res.statistic < -10 and res.p_value < 0.05
    noisy = diebold_mariano(a, a + 0.1 + np.random.default_rng(2).normal(0, 0.05, 500))
    assert noisy.statistic < -10 and noisy.p_value < 0.05


def test_dm_size_band():
    rng = np.random.default_rng(3)
    reps = 2000
    rejections = sum(diebold_mariano(rng.normal(size=200), rng.normal(size=200)).p_value < 0.05 for _ in range(reps))
    half = 2.576 * math.sqrt(0.05 * 0.95 / reps)
    assert abs(rejections / reps - 0.05) < half + 0.01  # HAC small-sample slack


@given(st.integers(0, 10_000), st.sampled_from([1, 7, 30]))
def test_dm_antisymmetric(seed, h):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=60), rng.normal(size=60)
    assert diebold_mariano(b, a, h).statistic == -diebold_mariano(a, b, h).statistic


def test_dm_needs_ten():
    with pytest.raises(ValueError):
        diebold_mariano(np.ones(9), np.zeros(9))


def test_utility_perfect_forecast():
    assert realized_utility(0.5, 0.5) == pytest.approx(0.04, abs=1e-15)
    rv = np.exp(np.random.default_rng(4).normal(0, 1, 100)) + 0.05
    assert average_realized_utility(rv, rv) == pytest.approx(0.04, abs=1e-15)
    assert average_realized_utility([0.3], [0.6]) == realized_utility(0.3, 0.6)


def test_utility_boundary_continuity():
    fv = 0.2**2
    for rv in (0.01, 0.04, 0.5):
        above = realized_utility(rv, fv * (1 + 1e-12))
        below = realized_utility(rv, fv * (1 - 1e-12))
        assert above == pytest.approx(below, abs=1e-9)
        assert realized_utility(rv, fv) == pytest.approx(0.4 * math.sqrt(rv) - rv, abs=1e-15)


@given(positive, positive)
def test_utility_matches_two_branch_oracle(rv, fv):
    assert realized_utility(rv, fv) == pytest.approx(two_branch_oracle(rv, fv), rel=1e-12, abs=1e-12)


@given(st.floats(0.05, 100), st.floats(0.05, 100), st.floats(1, 50))
def test_utility_scale_invariance_uncapped(rv, fv, s):
    assert realized_utility(s * rv, s * fv) == pytest.approx(realized_utility(rv, fv), rel=1e-12, abs=1e-15)


@given(st.floats(0.05, 100))
def test_utility_grid_maximum(rv):
    grid = rv * np.exp(np.linspace(-1, 1, 2001))
    u = realized_utility(np.full_like(grid, rv), grid)
    assert grid[np.argmax(u)] == pytest.approx(rv, rel=2e-3)
    assert u.max() <= 0.04 + 1e-15


@given(st.lists(st.tuples(st.floats(0.05, 10), st.floats(0.05, 10)), min_size=1, max_size=20))
def test_average_utility_bounded_when_uncapped(pairs):
    rv, fv = map(np.array, zip(*pairs))
    assert average_realized_utility(rv, fv) <= 0.04 + 1e-15


def test_utility_config_validation():
    with pytest.raises(ValueError):
        UtilityConfig(sharpe=0)
    with pytest.raises(ValueError):
        UtilityConfig(gamma=-1)
    with pytest.raises(ValueError):
        EvaluationConfig(utility_units="weekly")


def test_report_marks_and_anchor_order():
    fc = forecast_table({"HAR": 0.1, "RVJ": 0.8, "RSV": 0.1}, n=400)
    rep = evaluate(fc)
    assert set(rep.dm["model_a"]) <= {"HAR", "RVJ"}
    marks = rep.marks("mse")
    assert marks.get(("RVJ", 1)) == "†"
    table = rep.table("qlike")
    assert table.loc[0, "RVJ"].endswith("†")
    assert list(table.columns) == ["h", "HAR", "RVJ", "RSV"]
    good = evaluate(forecast_table({"HAR": 0.8, "RVJ": 0.1}, n=400))
    assert good.marks("qlike") == {("RVJ", 1): "*"}


def test_report_dm_antisymmetry_against_swap():
    fc = forecast_table({"HAR": 0.3, "RVJ": 0.35}, n=300)
    a = evaluate(fc, EvaluationConfig(anchor="HAR")).dm.set_index("metric")
    b = evaluate(fc, EvaluationConfig(anchor="RVJ")).dm.set_index("metric")
    np.testing.assert_array_equal(a["statistic"], -b.loc[a.index, "statistic"])


def test_report_excludes_and_counts():
    fc = forecast_table({"HAR": 0.2, "RVJ": 0.2}, n=100)
    fc.loc[3, "forecast_var"] = np.nan
    fc.loc[4, "failed"] = True
    fc.loc[5, "realized_var"] = 0.0
    fc.loc[6, "filtered"] = True
    rep = evaluate(fc)
    har = rep.metrics[rep.metrics["model"] == "HAR"].iloc[0]
    assert (har["n"], har["n_excluded"], har["n_filtered"]) == (97, 3, 1)
    assert any("not strictly comparable" in n for n in rep.notes)
    assert rep.dm["n"].iloc[0] == 97
    assert (rep.metrics["mse"] >= 0).all() and (rep.metrics["hrmse"] >= 0).all()


def test_report_json_deterministic_and_finite():
    fc = forecast_table({"HAR": 0.2, "RSV": 0.25}, n=120)
    a, b = evaluate(fc).to_json(), evaluate(fc.copy()).to_json()
    assert a == b
    doc = json.loads(a)
    assert doc["config"]["utility_units"] == "table"
    assert {"mz_r2", "mse", "hrmse", "qlike", "realized_utility"} <= set(doc["metrics"][0])


def test_perfect_table_scores():
    fc = forecast_table({"HAR": 0.0}, n=50)
    m = evaluate(fc).metrics.iloc[0]
    assert m["mse"] == 0 and m["hrmse"] == 0
    assert m["realized_utility"] == pytest.approx(0.04, abs=1e-15)
    assert m["mz_r2"] == pytest.approx(1.0, abs=1e-12)
    daily = evaluate(fc, EvaluationConfig(utility_units="daily")).metrics.iloc[0]
    assert daily["realized_utility"] <= 0.04
