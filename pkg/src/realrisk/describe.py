"""Descriptive statistics, autocorrelations and kernel densities for record columns."""

from __future__ import annotations

import numpy as np
import pandas as pd

ACF_LAGS = (1, 7, 30, 100)
PERCENTILES = (5, 50, 95)
STAT_COLUMNS = (
    "column", "n", "mean", "std", "min", "p5", "p50", "p95", "max", "skewness", "excess_kurtosis",
    *(f"acf_{lag}" for lag in ACF_LAGS), "note",
)
NOT_AVAILABLE = "not available"


def acf(x, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags ``0..max_lag`` with the ``n``-denominator autocovariance.

    NaN for a constant series.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if max_lag >= n:
        raise ValueError(f"max_lag {max_lag} needs more than {n} observations")
    d = x - x.mean()
    c0 = d @ d / n
    if c0 <= (1e-14 * max(np.abs(x).max(), 1e-300)) ** 2:
        return np.full(max_lag + 1, np.nan)
    return np.array([d[k:] @ d[: n - k] / n for k in range(max_lag + 1)]) / c0


def summary(x, name: str = "x") -> dict:
    """Moments, linear-interpolation percentiles and ACF at the standard lags."""
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    n = len(x)
    if n == 0:
        raise ValueError(f"column {name} has no finite values")
    notes = []
    mean = float(x.mean())
    d = x - mean
    m2 = float(d @ d / n)
    row = {"column": name, "n": n, "mean": mean, "std": float(np.sqrt(m2)), "min": float(x.min()), "max": float(x.max())}
    for p, v in zip(PERCENTILES, np.percentile(x, PERCENTILES, method="linear")):
        row[f"p{p}"] = float(v)
    constant = np.isnan(acf(x, 0)[0]) if n > 1 else True
    if constant:
        row["std"] = 0.0
        row["skewness"] = row["excess_kurtosis"] = np.nan
        notes.append("constant column: skewness, kurtosis and ACF not available")
    else:
        row["skewness"] = float(np.mean(d**3) / m2**1.5)
        row["excess_kurtosis"] = float(np.mean(d**4) / m2**2 - 3.0)
    usable = [lag for lag in ACF_LAGS if lag < n]
    rho = acf(x, max(usable)) if usable and not constant else None
    for lag in ACF_LAGS:
        row[f"acf_{lag}"] = float(rho[lag]) if rho is not None and lag < n else np.nan
    short = [lag for lag in ACF_LAGS if lag >= n]
    if short:
        notes.append(f"ACF at lags {short} omitted: only {n} observations")
    row["note"] = "; ".join(notes)
    return row


def describe_records(records: pd.DataFrame, columns=None) -> pd.DataFrame:
    """One summary row per numeric column, in column order."""
    if len(records) == 0:
        raise ValueError("no records to describe")
    cols = columns or [c for c in records.columns if c != "day" and pd.api.types.is_numeric_dtype(records[c])]
    return pd.DataFrame([summary(records[c].to_numpy(float), c) for c in cols], columns=list(STAT_COLUMNS))


def acf_frame(records: pd.DataFrame, columns, max_lag: int = 100) -> pd.DataFrame:
    """Long table ``column,lag,acf`` for plotting; lags beyond the sample are dropped."""
    parts = []
    for c in columns:
        x = records[c].to_numpy(float)
        x = x[np.isfinite(x)]
        top = min(max_lag, len(x) - 1)
        if top < 1:
            continue
        parts.append(pd.DataFrame({"column": c, "lag": np.arange(1, top + 1), "acf": acf(x, top)[1:]}))
    return pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=["column", "lag", "acf"])


def epanechnikov_kde(x, bandwidth: float = 1.5, grid_points: int = 512, grid=None) -> tuple[np.ndarray, np.ndarray]:
    """Epanechnikov density estimate on a grid spanning the data plus one bandwidth each side."""
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0 or not bandwidth > 0:
        raise ValueError("KDE needs data and a positive bandwidth")
    if grid is None:
        grid = np.linspace(x.min() - bandwidth, x.max() + bandwidth, grid_points)
    grid = np.asarray(grid, dtype=float)
    dens = np.zeros_like(grid)
    xs = np.sort(x)
    # kernel support is compact, so only points within one bandwidth contribute
    lo = np.searchsorted(xs, grid - bandwidth, side="left")
    hi = np.searchsorted(xs, grid + bandwidth, side="right")
    for i, (a, b) in enumerate(zip(lo, hi)):
        u = (grid[i] - xs[a:b]) / bandwidth
        dens[i] = np.sum(np.maximum(0.75 * (1.0 - u * u), 0.0))
    return grid, dens / (x.size * bandwidth)


def kde_frame(records: pd.DataFrame, columns, bandwidth: float = 1.5, log_scale: bool = True,
              grid_points: int = 512) -> pd.DataFrame:
    """Long table ``column,x,density``; non-positive values are skipped on the log scale."""
    parts = []
    for c in columns:
        x = records[c].to_numpy(float)
        x = x[np.isfinite(x)]
        if log_scale:
            x = np.log(x[x > 0])
        if x.size == 0:
            continue
        g, d = epanechnikov_kde(x, bandwidth, grid_points)
        parts.append(pd.DataFrame({"column": c, "x": g, "density": d}))
    return pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=["column", "x", "density"])
