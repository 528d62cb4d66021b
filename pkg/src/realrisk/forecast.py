"""Full-sample HAR-family fits and the rolling out-of-sample engine.

A rolling forecast made at origin ``t`` is fitted on the latest ``window``
design rows whose targets are fully observed by ``t`` (origins ``s <= t-h``),
so deleting data after ``t`` cannot change it. The window counts usable design
rows, not calendar days.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .models import DesignConfig, ModelKind, build_design, column_labels, regressor_matrix, target_vector
from .regression import OlsFit, RankDeficientError, mincer_zarnowitz_r2, ols_fit

log = logging.getLogger(__name__)

DEFAULT_HAC_LAGS = {1: 7, 7: 14, 30: 60}
FORECAST_COLUMNS = (
    "date",
    "model",
    "h",
    "forecast_log",
    "forecast_var",
    "realized_var",
    "filtered",
    "window_start",
    "failed",
)
Z_95 = 1.959963984540054


class ForecastError(ValueError):
    pass


def hac_lags_for(h: int, overrides: dict[int, int] | None = None) -> int:
    """Newey-West lags for horizon ``h``: overrides, then 7/14/60 for h=1/7/30, else ``h``."""
    if overrides and h in overrides:
        return int(overrides[h])
    return DEFAULT_HAC_LAGS.get(h, h)


@dataclass(frozen=True)
class FullSampleFit:
    kind: ModelKind
    h: int
    fit: OlsFit
    mz_r2: float
    n_obs: int

    def table(self) -> pd.DataFrame:
        """Coefficient and t-stat per regressor, then a Mincer-Zarnowitz R-squared row."""
        rows = [
            {"term": label, "coefficient": float(b), "t_stat": float(t)}
            for label, b, t in zip(self.fit.column_labels, self.fit.coefficients, self.fit.t_stats)
        ]
        rows.append({"term": "MZ-R2 (log)", "coefficient": self.mz_r2, "t_stat": np.nan})
        out = pd.DataFrame(rows)
        out.insert(0, "h", self.h)
        out.insert(0, "model", self.kind.value)
        return out


def fit_full_sample(
    kind,
    records: pd.DataFrame,
    h: int,
    config: DesignConfig = DesignConfig(),
    hac_lags: dict[int, int] | None = None,
) -> FullSampleFit:
    design = build_design(kind, records, h, config)
    fit = ols_fit(design.X, design.y, hac_lags_for(h, hac_lags))
    fitted = design.y - fit.residuals
    return FullSampleFit(design.kind, h, fit, mincer_zarnowitz_r2(fitted, design.y), len(design.y))


def coefficient_table(fits: list[FullSampleFit]) -> pd.DataFrame:
    return pd.concat([f.table() for f in fits], ignore_index=True)


def insanity_filter(forecast_var: float, window_realized) -> tuple[float, bool]:
    """Clamp a forecast into the range of realizations seen in the estimation window."""
    w = np.asarray(window_realized, dtype=float)
    if w.size == 0:
        raise ValueError("insanity filter needs a non-empty window")
    lo, hi = float(w.min()), float(w.max())
    clamped = min(max(float(forecast_var), lo), hi)
    return clamped, clamped != float(forecast_var)


def back_transform(forecast_log: float, cap: float = 700.0, log_variance: float | None = None) -> float:
    """Plain exponentiation back to variance units.

    ``log_variance`` adds the log-normal half-variance correction; by default
    none is applied.
    """
    x = float(forecast_log)
    if not math.isfinite(x):
        raise ForecastError(f"log forecast is not finite: {x}")
    if log_variance is not None:
        x += 0.5 * log_variance
    if x > cap:
        raise ForecastError(f"log forecast {x} exceeds the exponent cap {cap}")
    return math.exp(x)


@dataclass(frozen=True)
class RollingConfig:
    window: int = 90
    hac_lags: dict[int, int] | None = None
    insanity: bool = True
    bias_correction: bool = False
    exponent_cap: float = 700.0


@dataclass
class RollingResult:
    forecasts: pd.DataFrame
    coefficients: pd.DataFrame
    notes: list[str] = field(default_factory=list)

    @classmethod
    def concat(cls, parts: list["RollingResult"]) -> "RollingResult":
        return cls(
            pd.concat([p.forecasts for p in parts], ignore_index=True),
            pd.concat([p.coefficients for p in parts], ignore_index=True),
            [n for p in parts for n in p.notes],
        )


def rolling_forecast(
    kind,
    records: pd.DataFrame,
    h: int,
    config: DesignConfig = DesignConfig(),
    rolling: RollingConfig = RollingConfig(),
) -> RollingResult:
    """Re-fit every day on the trailing window and forecast mean RV over ``(t, t+h]``.

    Forecast rows exist only for origins whose target is observed; the
    coefficient track also covers the final ``h`` origins. A degenerate fit
    yields a row with ``failed`` set and NaN estimates.
    """
    kind = ModelKind(kind)
    window = rolling.window
    n = len(records)
    if n < window + 29 + h:
        raise ForecastError(f"need at least {window + 29 + h} days, got {n}")
    design = build_design(kind, records, h, config)  # validates inputs
    labels = column_labels(kind)
    z = regressor_matrix(kind, records, config)
    y_all = target_vector(records, h, config)
    rows = design.positions
    y = design.y
    dates = list(records["day"])
    lags = hac_lags_for(h, rolling.hac_lags)
    notes = []
    if lags >= window:
        notes.append(f"{kind.value} h={h}: {lags} HAC lags do not fit a {window}-row window; using {window - 1}")
        lags = window - 1
    elif lags > window // 2:
        notes.append(f"{kind.value} h={h}: {lags} HAC lags in a {window}-row window")
    for note in notes:
        log.info(note)

    fc_rows, coef_rows = [], []
    first_origin = max(int(rows[0]) + h + window - 1, 29)
    for t in range(first_origin, n):
        # training rows: origins s <= t - h, the last `window` of them
        end = np.searchsorted(rows, t - h, side="right")
        if end < window:
            continue
        train = slice(end - window, end)
        x_train, y_train = design.X.values[train], y[train]
        start_date = dates[rows[end - window]]
        has_target = np.isfinite(y_all[t])
        try:
            fit = ols_fit(x_train, y_train, lags)
        except (RankDeficientError, np.linalg.LinAlgError):
            fit = None
        if fit is None:
            coef_rows.extend(
                {"date": dates[t], "model": kind.value, "h": h, "term": lab, "estimate": np.nan,
                 "lower": np.nan, "upper": np.nan, "failed": True}
                for lab in labels
            )
            if has_target:
                fc_rows.append((dates[t], kind.value, h, np.nan, np.nan, math.exp(y_all[t]), False, start_date, True))
            continue
        se = fit.std_errors
        coef_rows.extend(
            {"date": dates[t], "model": kind.value, "h": h, "term": lab, "estimate": float(b),
             "lower": float(b - Z_95 * s), "upper": float(b + Z_95 * s), "failed": False}
            for lab, b, s in zip(labels, fit.coefficients, se)
        )
        if not has_target:
            continue
        f_log = float(z[t] @ fit.coefficients)
        resid_var = float(fit.residuals @ fit.residuals) / (window - len(labels)) if rolling.bias_correction else None
        try:
            f_var = back_transform(f_log, rolling.exponent_cap, resid_var)
        except ForecastError:
            fc_rows.append((dates[t], kind.value, h, f_log, np.nan, math.exp(y_all[t]), False, start_date, True))
            continue
        filtered = False
        if rolling.insanity:
            f_var, filtered = insanity_filter(f_var, np.exp(y_train))
        fc_rows.append((dates[t], kind.value, h, f_log, f_var, math.exp(y_all[t]), filtered, start_date, False))

    forecasts = pd.DataFrame(fc_rows, columns=list(FORECAST_COLUMNS))
    coefficients = pd.DataFrame(
        coef_rows, columns=["date", "model", "h", "term", "estimate", "lower", "upper", "failed"]
    )
    return RollingResult(forecasts, coefficients, notes)


def run_rolling(
    records: pd.DataFrame,
    kinds=tuple(ModelKind),
    horizons=(1, 7, 30),
    config: DesignConfig = DesignConfig(),
    rolling: RollingConfig = RollingConfig(),
) -> RollingResult:
    """Rolling forecasts for every (model, horizon) pair, in a fixed order."""
    parts = [rolling_forecast(k, records, h, config, rolling) for h in horizons for k in kinds]
    return RollingResult.concat(parts)
