"""Forecast scoring: statistical losses, Diebold-Mariano tests and realized utility."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np
import pandas as pd
from scipy import special

from .regression import mincer_zarnowitz_r2

LOSS_METRICS = ("mse", "hrmse", "qlike")
METRICS = ("mz_r2", "mse", "hrmse", "qlike", "realized_utility")
DM_LEVEL = 0.05


@dataclass(frozen=True)
class UtilityConfig:
    sharpe: float = 0.4
    gamma: float = 2.0
    weight_cap: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not (self.sharpe > 0 and self.gamma > 0):
            raise ValueError("sharpe and gamma must be positive")
        lo, hi = self.weight_cap
        if not 0 <= lo <= hi:
            raise ValueError(f"weight_cap must satisfy 0 <= lo <= hi, got {self.weight_cap}")


def loss_terms(realized, forecast) -> dict[str, np.ndarray]:
    rv = np.asarray(realized, dtype=float)
    fv = np.asarray(forecast, dtype=float)
    err = rv - fv
    return {"mse": err**2, "hrmse": (err / rv) ** 2, "qlike": np.log(fv) + rv / fv}


def losses(record) -> tuple[float, float, float]:
    """Per-record ``(mse, hrmse, qlike)`` terms for a forecast row."""
    rv, fv = float(record["realized_var"]), float(record["forecast_var"])
    if not (rv > 0 and fv > 0):
        raise ValueError("losses need positive realized and forecast variance")
    t = loss_terms(rv, fv)
    return float(t["mse"]), float(t["hrmse"]), float(t["qlike"])


def aggregate_losses(realized, forecast) -> dict[str, float]:
    """MSE and QLIKE are means of their terms; HRMSE is the root of its mean term."""
    t = loss_terms(realized, forecast)
    return {"mse": float(t["mse"].mean()), "hrmse": math.sqrt(t["hrmse"].mean()), "qlike": float(t["qlike"].mean())}


def realized_utility(realized_var, forecast_var, cfg: UtilityConfig = UtilityConfig()):
    """Per-wealth mean-variance utility of the position targeting ``sharpe/gamma`` volatility.

    The weight ``(SR/gamma)/sqrt(forecast)`` is clipped to ``cfg.weight_cap``.
    """
    rv = np.asarray(realized_var, dtype=float)
    fv = np.asarray(forecast_var, dtype=float)
    w = np.clip((cfg.sharpe / cfg.gamma) / np.sqrt(fv), *cfg.weight_cap)
    out = w * cfg.sharpe * np.sqrt(rv) - 0.5 * cfg.gamma * w * w * rv
    return float(out) if out.ndim == 0 else out


def average_realized_utility(realized_var, forecast_var, cfg: UtilityConfig = UtilityConfig()) -> float:
    u = np.atleast_1d(realized_utility(realized_var, forecast_var, cfg))
    if u.size == 0:
        raise ValueError("average realized utility needs at least one record")
    return float(u.mean())


@dataclass(frozen=True)
class DMResult:
    statistic: float
    p_value: float


def long_run_variance(x, lags: int) -> float:
    """Bartlett-weighted long-run variance with the ``n`` denominator."""
    d = np.asarray(x, dtype=float) - np.mean(x)
    n = len(d)
    lrv = d @ d / n
    for lag in range(1, min(lags, n - 1) + 1):
        lrv += 2.0 * (1.0 - lag / (lags + 1.0)) * (d[lag:] @ d[:-lag]) / n
    return float(lrv)


def diebold_mariano(loss_a, loss_b, h: int = 1, lags: int | None = None) -> DMResult:
    """Test equal predictive accuracy; negative statistics favour ``loss_a``.

    The differential's long-run variance uses ``h - 1`` Bartlett lags unless
    ``lags`` is given. With a degenerate (constant) differential the statistic
    is 0 with p-value 1 when the losses coincide, else signed infinity with
    p-value 0.
    """
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("loss series must be aligned 1-D arrays")
    n = len(a)
    if n < 10:
        raise ValueError(f"Diebold-Mariano needs at least 10 observations, got {n}")
    d = a - b
    mean = float(d.mean())
    lrv = long_run_variance(d, h - 1 if lags is None else lags)
    scale = float(np.abs(d).max())
    if lrv <= (1e-12 * scale) ** 2:
        if scale == 0.0:
            return DMResult(0.0, 1.0)
        return DMResult(math.copysign(math.inf, mean), 0.0)
    stat = mean / math.sqrt(lrv / n)
    return DMResult(stat, float(2.0 * special.ndtr(-abs(stat))))


@dataclass(frozen=True)
class EvaluationConfig:
    utility: UtilityConfig = UtilityConfig()
    utility_units: str = "table"  # "table" (as forecast), or "daily"
    annualization: float = 365.0
    dm_lags: int | None = None
    anchor: str = "HAR"

    def __post_init__(self):
        if self.utility_units not in ("table", "daily"):
            raise ValueError("utility_units must be 'table' or 'daily'")


@dataclass
class EvaluationReport:
    metrics: pd.DataFrame
    dm: pd.DataFrame
    config: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, (float, np.floating)):
                return None if not math.isfinite(v) else float(v)
            if isinstance(v, np.integer):
                return int(v)
            if isinstance(v, np.bool_):
                return bool(v)
            return v

        return {
            "config": self.config,
            "metrics": [{k: clean(v) for k, v in row.items()} for row in self.metrics.to_dict("records")],
            "diebold_mariano": [
                {k: (str(v) if isinstance(v, float) and math.isinf(v) else clean(v)) for k, v in row.items()}
                for row in self.dm.to_dict("records")
            ],
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def marks(self, metric: str) -> dict[tuple[str, int], str]:
        """D-M marks against the anchor model: a dagger when the anchor wins, '*' when it loses."""
        anchor = self.config.get("anchor", "HAR")
        out = {}
        sel = self.dm[(self.dm["metric"] == metric) & (self.dm["model_a"] == anchor)]
        for row in sel.itertuples():
            if row.p_value < DM_LEVEL:
                out[(row.model_b, row.h)] = "†" if row.statistic < 0 else "*"
        return out

    def table(self, metric: str) -> pd.DataFrame:
        """Horizon rows by model columns, values to 3 decimals with anchored D-M marks."""
        marks = self.marks(metric) if metric in LOSS_METRICS else {}
        models = list(dict.fromkeys(self.metrics["model"]))
        rows = []
        for h, part in self.metrics.groupby("h", sort=True):
            vals = dict(zip(part["model"], part[metric]))
            row = {"h": int(h)}
            for m in models:
                v = vals.get(m, np.nan)
                row[m] = ("nan" if not np.isfinite(v) else f"{v:.3f}") + marks.get((m, int(h)), "")
            rows.append(row)
        return pd.DataFrame(rows, columns=["h"] + models)


def evaluate(forecasts: pd.DataFrame, cfg: EvaluationConfig = EvaluationConfig()) -> EvaluationReport:
    """Score a forecast table for every (model, h) cell and all model pairs.

    Records with missing or non-positive values are excluded and counted; D-M
    comparisons use the dates both models share.
    """
    df = forecasts.copy()
    usable = (
        np.isfinite(df["forecast_var"]) & np.isfinite(df["realized_var"]) & (df["forecast_var"] > 0) & (df["realized_var"] > 0)
    )
    if "failed" in df:
        usable &= ~df["failed"].astype(bool)
    df["usable"] = usable
    ufac = 1.0 / cfg.annualization if cfg.utility_units == "daily" else 1.0
    models = list(dict.fromkeys(df["model"]))
    horizons = sorted(set(int(h) for h in df["h"]))

    metric_rows, notes = [], []
    loss_by_cell = {}
    for h in horizons:
        counts = {}
        for m in models:
            cell = df[(df["model"] == m) & (df["h"] == h)]
            ok = cell[cell["usable"]]
            counts[m] = len(ok)
            row = {"model": m, "h": h, "n": len(ok), "n_excluded": int(len(cell) - len(ok))}
            if len(ok):
                rv, fv = ok["realized_var"].to_numpy(), ok["forecast_var"].to_numpy()
                row.update(aggregate_losses(rv, fv))
                row["mz_r2"] = mincer_zarnowitz_r2(fv, rv) if len(ok) >= 3 else np.nan
                row["realized_utility"] = average_realized_utility(rv * ufac, fv * ufac, cfg.utility)
                row["n_filtered"] = int(ok["filtered"].astype(bool).sum())
                loss_by_cell[(m, h)] = pd.DataFrame(loss_terms(rv, fv), index=ok["date"].to_numpy())
            else:
                row.update({k: np.nan for k in METRICS})
                row["n_filtered"] = 0
            metric_rows.append(row)
        if len(set(counts.values())) > 1:
            notes.append(f"h={h}: models scored on different record counts {counts}; metrics not strictly comparable")

    dm_rows = []
    ordered = [cfg.anchor] + [m for m in models if m != cfg.anchor] if cfg.anchor in models else models
    for h in horizons:
        for a, b in combinations(ordered, 2):
            la, lb = loss_by_cell.get((a, h)), loss_by_cell.get((b, h))
            if la is None or lb is None:
                continue
            common = la.index.intersection(lb.index)
            for metric in LOSS_METRICS:
                if len(common) < 10:
                    continue
                res = diebold_mariano(la.loc[common, metric].to_numpy(), lb.loc[common, metric].to_numpy(), h, cfg.dm_lags)
                dm_rows.append({"h": h, "metric": metric, "model_a": a, "model_b": b,
                                "statistic": res.statistic, "p_value": res.p_value, "n": len(common)})

    metrics = pd.DataFrame(metric_rows, columns=["model", "h", "n", "n_excluded", "n_filtered", *METRICS])
    dm = pd.DataFrame(dm_rows, columns=["h", "metric", "model_a", "model_b", "statistic", "p_value", "n"])
    config = {
        "utility": asdict(cfg.utility),
        "utility_units": cfg.utility_units,
        "annualization": cfg.annualization,
        "dm_lags": "h-1" if cfg.dm_lags is None else cfg.dm_lags,
        "anchor": cfg.anchor,
        "mz_r2_form": "squared (variance units)",
    }
    return EvaluationReport(metrics, dm, config, notes)
