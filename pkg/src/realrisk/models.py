"""HAR-family design matrices built from the daily record table.

Rows are indexed by the forecast origin ``t`` (a position in the record
table). Regressors average over the trailing windows ``(t-l, t]`` for
``l`` in ``(1, 7, 30)``; the target is the log of mean RV over ``(t, t+h]``.
Days are consecutive table rows, so dates removed during cleaning are skipped
rather than counted.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd

from .regression import DesignMatrix

LAGS = (1, 7, 30)


class ModelKind(str, Enum):
    HAR = "HAR"
    RVJ = "RVJ"
    RSV = "RSV"
    RSVSJ = "RSVSJ"

    @property
    def n_regressors(self) -> int:
        return len(_LAYOUT[self]) * len(LAGS)


# (label stem, record column, enters as log(x + 1))
_LAYOUT = {
    ModelKind.HAR: [("rv", "rv", False)],
    ModelKind.RVJ: [("rv", "rv", False), ("j", "jump_sq", True)],
    ModelKind.RSV: [("rsvpos", "rsv_pos", False), ("rsvneg", "rsv_neg", False)],
    ModelKind.RSVSJ: [
        ("rsvpos", "rsv_pos", False),
        ("rsvneg", "rsv_neg", False),
        ("jpos", "jump_pos_sq", True),
        ("jneg", "jump_neg_sq", True),
    ],
}


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class HorizonSpec:
    h: int

    def __post_init__(self):
        if self.h < 1:
            raise ValueError(f"horizon must be at least 1, got {self.h}")


@dataclass(frozen=True)
class DesignConfig:
    """Units entering the logs.

    ``annualization`` multiplies every variance-like input (365 for markets
    trading every calendar day). ``jump_scale`` selects the squared jump
    contribution (``"squared"``) or its square root (``"root"``).
    """

    annualization: float = 365.0
    jump_scale: str = "squared"

    def __post_init__(self):
        if self.jump_scale not in ("squared", "root"):
            raise ValueError(f"jump_scale must be 'squared' or 'root', got {self.jump_scale!r}")
        if not self.annualization > 0:
            raise ValueError("annualization must be positive")


@dataclass(frozen=True)
class HarDesign:
    kind: ModelKind
    h: int
    X: DesignMatrix
    y: np.ndarray
    positions: np.ndarray  # record-table position of each row's origin t

    @property
    def dates(self) -> tuple:
        return self.X.index


def aggregate(series, l: int) -> np.ndarray:
    """Trailing mean over ``(t-l, t]``; NaN where fewer than ``l`` values exist."""
    if l < 1:
        raise ValueError("window must be at least 1")
    x = np.asarray(series, dtype=float)
    out = np.full(x.shape, np.nan)
    if len(x) >= l:
        out[l - 1 :] = np.lib.stride_tricks.sliding_window_view(x, l).mean(axis=1)
    return out


def forward_mean(series, h: int) -> np.ndarray:
    """Mean over ``(t, t+h]``; NaN where the window runs past the end."""
    x = np.asarray(series, dtype=float)
    out = np.full(x.shape, np.nan)
    if len(x) > h:
        out[: len(x) - h] = aggregate(x, h)[h:]
    return out


def column_labels(kind: ModelKind) -> tuple[str, ...]:
    kind = ModelKind(kind)
    return ("const",) + tuple(f"log_{stem}_{l}" for stem, _, _ in _LAYOUT[kind] for l in LAGS)


def _inputs(records: pd.DataFrame, column: str, is_jump: bool, config: DesignConfig) -> np.ndarray:
    x = records[column].to_numpy(float) * config.annualization
    if is_jump and config.jump_scale == "root":
        x = np.sqrt(x)
    return x


def regressor_matrix(kind, records: pd.DataFrame, config: DesignConfig = DesignConfig()) -> np.ndarray:
    """Regressors for every record row (NaN rows before the longest window fills)."""
    kind = ModelKind(kind)
    cols = [np.ones(len(records))]
    for _, column, is_jump in _LAYOUT[kind]:
        x = _inputs(records, column, is_jump, config)
        for l in LAGS:
            agg = aggregate(x, l)
            with np.errstate(divide="ignore", invalid="ignore"):
                cols.append(np.log(agg + 1.0) if is_jump else np.log(agg))
    return np.column_stack(cols)


def target_vector(records: pd.DataFrame, h: int, config: DesignConfig = DesignConfig()) -> np.ndarray:
    rv = records["rv"].to_numpy(float) * config.annualization
    with np.errstate(divide="ignore"):
        return np.log(forward_mean(rv, h))


def design_rows(n_days: int, h: int) -> np.ndarray:
    """Origins with complete regressor and target windows."""
    return np.arange(max(LAGS) - 1, n_days - h)


def _check_positive_rv(records: pd.DataFrame) -> None:
    # every record row falls inside some emitted window, so all of them are checked
    rv = records["rv"].to_numpy(float)
    bad = np.flatnonzero(~(rv > 0))
    if bad.size:
        day = records["day"].iloc[bad[0]]
        raise DesignError(f"RV is not positive on {day}; its log is undefined")


def build_design(kind, records: pd.DataFrame, spec: HorizonSpec | int, config: DesignConfig = DesignConfig()) -> HarDesign:
    kind = ModelKind(kind)
    h = spec.h if isinstance(spec, HorizonSpec) else HorizonSpec(int(spec)).h
    n = len(records)
    if n < max(LAGS) + h + 1:
        raise DesignError(f"need at least {max(LAGS) + h + 1} days for h={h}, got {n}")
    _check_positive_rv(records)
    rows = design_rows(n, h)
    z = regressor_matrix(kind, records, config)[rows]
    y = target_vector(records, h, config)[rows]
    finite = np.isfinite(z).all(axis=1)
    if not finite.all():
        i = int(np.argmin(finite))
        col = column_labels(kind)[int(np.argmin(np.isfinite(z[i])))]
        raise DesignError(f"{col} is undefined at {records['day'].iloc[rows[i]]} (zero input under a log)")
    dates = tuple(records["day"].iloc[rows])
    return HarDesign(kind, h, DesignMatrix(z, column_labels(kind), dates), y, rows)


def design_frame(design: HarDesign) -> pd.DataFrame:
    """Audit export: one row per origin with regressors and target."""
    df = pd.DataFrame(design.X.values, columns=design.X.column_labels)
    df.insert(0, "date", [str(d) for d in design.dates])
    df["target_log_rv"] = design.y
    return df
