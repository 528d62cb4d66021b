import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from realrisk.describe import NOT_AVAILABLE, STAT_COLUMNS, acf, acf_frame, describe_records, epanechnikov_kde, kde_frame, summary


def test_normal_moments_within_three_se():
    n = 10_000
    rows = [summary(np.random.default_rng(s).normal(size=n)) for s in range(5)]
    for row in rows:
        assert abs(row["skewness"]) < 3 * math.sqrt(6 / n)
        assert abs(row["excess_kurtosis"]) < 3 * math.sqrt(24 / n)
        assert abs(row["acf_1"]) < 3 / math.sqrt(n)


def test_percentiles_linear_interpolation():
    row = summary(np.arange(1.0, 11.0))
    assert (row["p5"], row["p50"], row["p95"]) == pytest.approx((1.45, 5.5, 9.55))
    assert (row["min"], row["max"]) == (1.0, 10.0)


def test_constant_column_not_available():
    row = summary(np.full(200, 2.5), "c")
    assert row["std"] == 0.0
    assert all(np.isnan(row[k]) for k in ("skewness", "excess_kurtosis", "acf_1", "acf_100"))
    assert NOT_AVAILABLE in row["note"]


def test_short_column_omits_long_lags():
    row = summary(np.random.default_rng(1).normal(size=100))
    assert np.isnan(row["acf_100"]) and np.isfinite(row["acf_30"])
    assert "[100] omitted" in row["note"]
    assert np.isfinite(summary(np.random.default_rng(1).normal(size=101))["acf_100"])


def test_acf_matches_loop_oracle():
    x = np.random.default_rng(2).normal(size=150).cumsum()
    n, m = len(x), x.mean()
    c = [sum((x[t] - m) * (x[t - k] - m) for t in range(k, n)) / n for k in range(11)]
    np.testing.assert_allclose(acf(x, 10), np.array(c) / c[0], rtol=1e-12)


@given(st.integers(0, 1000), st.floats(0.1, 5))
def test_kde_integrates_to_one(seed, bandwidth):
    x = np.random.default_rng(seed).normal(size=200)
    g, d = epanechnikov_kde(x, bandwidth, grid_points=2048)
    assert trapezoid(d, g) == pytest.approx(1.0, abs=1e-3)
    assert np.all(d >= 0)


def test_kde_matches_direct_sum():
    x = np.random.default_rng(3).normal(size=50)
    g, d = epanechnikov_kde(x, 1.5, grid_points=64)
    u = (g[:, None] - x[None, :]) / 1.5
    direct = np.where(np.abs(u) <= 1, 0.75 * (1 - u**2), 0).sum(axis=1) / (50 * 1.5)
    np.testing.assert_allclose(d, direct, rtol=1e-12, atol=1e-15)


def test_record_tables():
    rng = np.random.default_rng(4)
    rec = pd.DataFrame({"day": range(300), "rv": np.exp(rng.normal(size=300)), "jump_sq": np.where(rng.random(300) < 0.5, 0.0, 1.0)})
    stats = describe_records(rec)
    assert list(stats.columns) == list(STAT_COLUMNS)
    assert list(stats["column"]) == ["rv", "jump_sq"]
    a = acf_frame(rec, ["rv"])
    assert list(a["lag"]) == list(range(1, 101))
    k = kde_frame(rec, ["rv", "jump_sq"])
    # zero jump days are off the log scale; the remaining ones sit at log 1 = 0
    jk = k[k["column"] == "jump_sq"]
    assert jk["x"].min() == pytest.approx(-1.5) and jk["x"].max() == pytest.approx(1.5)
    with pytest.raises(ValueError):
        describe_records(rec.iloc[:0])
