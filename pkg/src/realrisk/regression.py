"""Least squares with Newey-West HAC covariance, and the Mincer-Zarnowitz regression."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

RANK_TOL = 1e-10


class RankDeficientError(ValueError):
    """The design matrix does not have full column rank."""

    def __init__(self, message: str, columns: Sequence[str] = ()):
        super().__init__(message)
        self.columns = list(columns)


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    column_labels: tuple[str, ...]
    index: tuple = field(default=())

    def __post_init__(self):
        x = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", x)
        object.__setattr__(self, "column_labels", tuple(self.column_labels))
        if x.ndim != 2:
            raise ValueError("design matrix must be two-dimensional")
        if len(self.column_labels) != x.shape[1]:
            raise ValueError("one label per column is required")
        if x.shape[0] <= x.shape[1]:
            raise ValueError(f"need more rows than columns, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("design matrix has non-finite entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def rows(self, sl) -> "DesignMatrix":
        idx = tuple(np.asarray(self.index, dtype=object)[sl]) if self.index else ()
        return DesignMatrix(self.values[sl], self.column_labels, idx)


@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    hac_covariance: np.ndarray
    t_stats: np.ndarray
    r_squared: float
    hac_lags: int
    column_labels: tuple[str, ...] = ()

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.hac_covariance))

    def as_dict(self) -> dict:
        return {
            label: {"coefficient": float(b), "t_stat": float(t), "std_error": float(s)}
            for label, b, t, s in zip(self.column_labels, self.coefficients, self.t_stats, self.std_errors)
        }


def _as_design(X) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(X, DesignMatrix):
        return X.values, X.column_labels
    x = np.asarray(X, dtype=float)
    return x, tuple(f"x{j}" for j in range(x.shape[1]))


def _check_rank(x: np.ndarray, labels: Sequence[str]) -> None:
    _, s, vt = np.linalg.svd(x, full_matrices=False)
    if s[0] == 0 or s[-1] / s[0] < RANK_TOL:
        null = vt[s < RANK_TOL * max(s[0], np.finfo(float).tiny)]
        involved = [labels[j] for j in np.flatnonzero(np.abs(null).max(axis=0) > 1e-8)]
        raise RankDeficientError(
            f"design matrix is rank deficient; dependent columns: {', '.join(involved)}", involved
        )


def ols_fit(X, y, hac_lags: int = 0) -> OlsFit:
    """OLS via a QR decomposition, with Newey-West covariance using ``hac_lags`` lags."""
    x, labels = _as_design(X)
    y = np.asarray(y, dtype=float)
    if y.shape != (x.shape[0],):
        raise ValueError(f"target length {y.shape} does not match {x.shape[0]} rows")
    _check_rank(x, labels)
    q, r = np.linalg.qr(x)
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - x @ beta
    cov = newey_west_cov(x, resid, hac_lags)
    tss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / tss if tss > 0 else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta / np.sqrt(np.diag(cov))
    return OlsFit(beta, resid, cov, t, float(min(max(r2, 0.0), 1.0)), int(hac_lags), labels)


def newey_west_cov(X, residuals, lags: int) -> np.ndarray:
    """Sandwich covariance with Bartlett weights ``1 - l/(lags+1)``; no small-sample factor."""
    x, _ = _as_design(X)
    e = np.asarray(residuals, dtype=float)
    n = x.shape[0]
    if not 0 <= lags < n:
        raise ValueError(f"lags must lie in [0, {n}), got {lags}")
    u = x * e[:, None]
    meat = u.T @ u
    for lag in range(1, lags + 1):
        s = u[lag:].T @ u[:-lag]
        meat += (1.0 - lag / (lags + 1.0)) * (s + s.T)
    # (X'X)^-1 from the triangular factor, avoiding the squared condition number of X'X
    r = np.linalg.qr(x, mode="r")
    r_inv = linalg.solve_triangular(r, np.eye(r.shape[0]))
    bread = r_inv @ r_inv.T
    cov = bread @ meat @ bread
    return 0.5 * (cov + cov.T)


def mincer_zarnowitz_r2(forecasts, realized) -> float:
    """R-squared of ``realized`` on an intercept and ``forecasts``; 0 for constant forecasts."""
    f = np.asarray(forecasts, dtype=float)
    y = np.asarray(realized, dtype=float)
    if f.shape != y.shape or f.ndim != 1:
        raise ValueError("forecasts and realized must be aligned 1-D arrays")
    if len(f) < 3:
        raise ValueError("Mincer-Zarnowitz regression needs at least 3 observations")
    fc = f - f.mean()
    yc = y - y.mean()
    sff = fc @ fc
    syy = yc @ yc
    # relative floor: a numerically constant series has only rounding-level spread
    if sff <= len(f) * (1e-13 * np.abs(f).max()) ** 2 or syy <= len(y) * (1e-13 * np.abs(y).max()) ** 2:
        return 0.0
    return float(min(max((fc @ yc) ** 2 / (sff * syy), 0.0), 1.0))
