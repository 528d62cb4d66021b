"""Tick ingestion, fixed-interval intraday grids and log returns.

A trading day is the UTC interval ``(midnight, next midnight]`` split into
``points_per_day`` equal slots. Slot ``j`` covers ``(start + j*dt, start + (j+1)*dt]``
and its grid price is the last tick at or before the slot's right boundary,
carried forward within the day. A tick stamped exactly at midnight therefore
closes the previous day.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

DEFAULT_POINTS_PER_DAY = 288
NS_PER_DAY = 86_400 * 10**9

_EPOCH = dt.date(1970, 1, 1)


class MarketDataError(ValueError):
    """Raised for malformed market data; ``position`` names the offending index."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class EmptyIntersectionError(MarketDataError):
    """No calendar date is covered by every source."""


@dataclass(frozen=True)
class TickRecord:
    timestamp: pd.Timestamp
    price: float
    volume: float | None = None

    def __post_init__(self):
        if not self.price > 0:
            raise MarketDataError(f"tick price must be positive, got {self.price}")


@dataclass(frozen=True)
class PriceGrid:
    day: dt.date
    prices: np.ndarray
    points_per_day: int = DEFAULT_POINTS_PER_DAY

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        object.__setattr__(self, "prices", prices)
        if prices.shape != (self.points_per_day,):
            raise MarketDataError(
                f"{self.day}: expected {self.points_per_day} prices, got {prices.shape}"
            )
        bad = np.flatnonzero(~(prices > 0))
        if bad.size:
            raise MarketDataError(
                f"{self.day}: non-positive price at index {bad[0]}", position=int(bad[0])
            )


@dataclass(frozen=True)
class ReturnGrid:
    day: dt.date
    returns: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "returns", np.asarray(self.returns, dtype=float))

    @property
    def points_per_day(self) -> int:
        return self.returns.shape[-1]

    @property
    def delta(self) -> float:
        return 1.0 / self.points_per_day


@dataclass
class CleaningReport:
    days_in: int = 0
    days_dropped: int = 0
    dropped_dates: list[tuple[dt.date, str]] = field(default_factory=list)

    def drop(self, day: dt.date, reason: str) -> None:
        self.dropped_dates.append((day, reason))
        self.days_dropped = len(self.dropped_dates)

    def merge(self, other: "CleaningReport") -> "CleaningReport":
        out = CleaningReport(self.days_in + other.days_in)
        for day, reason in sorted(self.dropped_dates + other.dropped_dates):
            out.drop(day, reason)
        return out

    def to_dict(self) -> dict:
        return {
            "days_in": self.days_in,
            "days_dropped": self.days_dropped,
            "dropped_dates": [
                {"date": d.isoformat(), "reason": r} for d, r in self.dropped_dates
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _day_from_index(k: int) -> dt.date:
    return _EPOCH + dt.timedelta(days=int(k))


def _day_index(day: dt.date) -> int:
    return (day - _EPOCH).days


def _to_ns(timestamps) -> np.ndarray:
    """UTC nanoseconds since the epoch for datetimes, strings or Unix seconds."""
    arr = np.asarray(timestamps)
    if arr.size == 0:
        return np.zeros(0, dtype=np.int64)
    if np.issubdtype(arr.dtype, np.number):
        return np.round(arr.astype(float) * 1e9).astype(np.int64)
    idx = pd.DatetimeIndex(pd.to_datetime(arr, utc=True))
    return idx.asi8.astype(np.int64) if idx.unit == "ns" else idx.as_unit("ns").asi8


def resample_last_tick(
    ticks: Sequence[TickRecord] | pd.DataFrame,
    points_per_day: int = DEFAULT_POINTS_PER_DAY,
) -> tuple[list[PriceGrid], CleaningReport]:
    """Sample the last tick at or before every slot boundary.

    ``ticks`` is a sequence of :class:`TickRecord` or a frame with
    ``timestamp`` and ``price`` columns. Days where some slot has no tick since
    the day opened are dropped whole and listed in the report, as are calendar
    days between the first and last tick that carry no ticks at all.
    """
    if points_per_day < 2:
        raise MarketDataError("points_per_day must be at least 2")
    if isinstance(ticks, pd.DataFrame):
        ts_raw, px = ticks["timestamp"].to_numpy(), ticks["price"].to_numpy(float)
    else:
        ticks = list(ticks)
        ts_raw = [t.timestamp for t in ticks]
        px = np.array([t.price for t in ticks], dtype=float)
    report = CleaningReport()
    if len(px) == 0:
        return [], report

    ts = _to_ns(ts_raw)
    back = np.flatnonzero(np.diff(ts) < 0)
    if back.size:
        pos = int(back[0]) + 1
        raise MarketDataError(f"timestamps decrease at position {pos}", position=pos)
    bad = np.flatnonzero(~(px > 0))
    if bad.size:
        raise MarketDataError(f"non-positive price at position {bad[0]}", position=int(bad[0]))

    first_day = int((ts[0] - 1) // NS_PER_DAY)
    last_day = int((ts[-1] - 1) // NS_PER_DAY)
    day_idx = np.arange(first_day, last_day + 1, dtype=np.int64)
    offsets = (np.arange(1, points_per_day + 1, dtype=np.int64) * NS_PER_DAY) // points_per_day
    starts = day_idx * NS_PER_DAY
    bounds = starts[:, None] + offsets[None, :]

    last = np.searchsorted(ts, bounds.ravel(), side="right").reshape(bounds.shape) - 1
    # a slot is priced only by a tick strictly after the day's opening instant
    valid = (last >= 0) & (ts[np.maximum(last, 0)] > starts[:, None])

    grids: list[PriceGrid] = []
    report.days_in = len(day_idx)
    for row, k in enumerate(day_idx):
        day = _day_from_index(k)
        ok = valid[row]
        if ok.all():
            grids.append(PriceGrid(day, px[last[row]], points_per_day))
        elif not ok.any() and not _has_ticks(ts, starts[row]):
            report.drop(day, "no ticks")
        else:
            slot = int(np.argmin(ok))
            report.drop(day, f"slot {slot} has no tick since the day opened")
    return grids, report


def _has_ticks(ts: np.ndarray, start: int) -> bool:
    i = np.searchsorted(ts, start, side="right")
    return i < len(ts) and ts[i] <= start + NS_PER_DAY


def log_returns(grid: PriceGrid, prev_close: float | None = None) -> ReturnGrid:
    """Log returns of one day; the first return spans from ``prev_close``.

    Without a previous close the first return is 0.
    """
    p = np.asarray(grid.prices, dtype=float)
    bad = np.flatnonzero(~(p > 0))
    if bad.size:
        raise MarketDataError(f"{grid.day}: non-positive price at index {bad[0]}", int(bad[0]))
    lp = np.log(p)
    r = np.empty_like(lp)
    r[1:] = np.diff(lp)
    if prev_close is None:
        r[0] = 0.0
    else:
        if not prev_close > 0:
            raise MarketDataError(f"{grid.day}: non-positive previous close {prev_close}")
        r[0] = lp[0] - np.log(prev_close)
    return ReturnGrid(grid.day, r)


def grids_to_returns(grids: Iterable[PriceGrid]) -> list[ReturnGrid]:
    """Convert a date-ordered grid series, chaining closes across consecutive dates.

    The previous close is used only when the previous calendar date is present;
    after a gap the day's first return is 0.
    """
    out: list[ReturnGrid] = []
    prev: PriceGrid | None = None
    for g in grids:
        if prev is not None and g.day <= prev.day:
            raise MarketDataError(f"grid dates not increasing at {g.day}")
        chained = prev is not None and (g.day - prev.day).days == 1
        out.append(log_returns(g, prev.prices[-1] if chained else None))
        prev = g
    return out


def stack_returns(returns: Sequence[ReturnGrid]) -> tuple[list[dt.date], np.ndarray]:
    if not returns:
        return [], np.zeros((0, DEFAULT_POINTS_PER_DAY))
    return [g.day for g in returns], np.vstack([g.returns for g in returns])


def average_exchanges(series: Sequence[Sequence[PriceGrid]]) -> list[PriceGrid]:
    """Point-wise arithmetic mean of several exchanges' grids on common dates."""
    if len(series) < 2:
        raise MarketDataError("need at least two sources to average")
    by_day = [{g.day: g for g in src} for src in series]
    common = set(by_day[0])
    for d in by_day[1:]:
        common &= set(d)
    if not common:
        raise EmptyIntersectionError("sources share no common date")
    out = []
    for day in sorted(common):
        grids = [d[day] for d in by_day]
        ppd = {g.points_per_day for g in grids}
        if len(ppd) != 1:
            raise MarketDataError(f"{day}: sources disagree on points_per_day {sorted(ppd)}")
        # sorted per point so the float sum does not depend on source order
        stacked = np.sort(np.vstack([g.prices for g in grids]), axis=0)
        out.append(PriceGrid(day, stacked.mean(axis=0), grids[0].points_per_day))
    return out


# -- CSV interfaces ---------------------------------------------------------


def read_ticks_csv(path: str | Path) -> pd.DataFrame:
    """Read ``timestamp,price[,volume]``; timestamps are ISO-8601 or Unix seconds."""
    try:
        df = pd.read_csv(path, dtype={"timestamp": str}, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise MarketDataError(f"cannot read tick file {path}: {exc}") from exc
    missing = {"timestamp", "price"} - set(df.columns)
    if missing:
        raise MarketDataError(f"{path}: missing columns {sorted(missing)}")
    numeric = pd.to_numeric(df["timestamp"], errors="coerce")
    if numeric.notna().all():
        df["timestamp"] = numeric.astype(float)
    else:
        try:
            df["timestamp"] = pd.to_datetime(df["timestamp"], utc=True, format="ISO8601")
        except (ValueError, TypeError) as exc:
            raise MarketDataError(f"{path}: unparseable timestamps: {exc}") from exc
    df["price"] = pd.to_numeric(df["price"], errors="coerce")
    if df["price"].isna().any():
        pos = int(np.flatnonzero(df["price"].isna().to_numpy())[0])
        raise MarketDataError(f"{path}: non-numeric price at row {pos}", position=pos)
    return df


def read_grid_csv(
    path: str | Path, points_per_day: int = DEFAULT_POINTS_PER_DAY, report: CleaningReport | None = None
) -> list[PriceGrid]:
    """Read grids in long (``date,slot,price``) or wide (``date`` + one column per slot) layout.

    A day with missing slots or a non-positive price raises, unless ``report``
    is given; then the day is dropped and listed there.
    """
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise MarketDataError(f"cannot read grid file {path}: {exc}") from exc
    if "date" not in df.columns:
        raise MarketDataError(f"{path}: missing 'date' column")
    if {"slot", "price"} <= set(df.columns):
        days = []
        for day, part in df.groupby("date", sort=True):
            part = part.sort_values("slot")
            slots = part["slot"].to_numpy()
            if len(slots) != points_per_day or not np.array_equal(slots, np.arange(points_per_day)):
                days.append((day, None, f"does not cover slots 0..{points_per_day - 1}"))
            else:
                days.append((day, part["price"].to_numpy(float), None))
    else:
        cols = [c for c in df.columns if c != "date"]
        if len(cols) != points_per_day:
            raise MarketDataError(f"{path}: wide layout needs {points_per_day} price columns, got {len(cols)}")
        df = df.sort_values("date")
        days = [(d, row, None) for d, row in zip(df["date"], df[cols].to_numpy(float))]
    grids = []
    if report is not None:
        report.days_in += len(days)
    for day, prices, problem in days:
        try:
            day = dt.date.fromisoformat(str(day))
        except ValueError as exc:
            raise MarketDataError(f"{path}: bad date {day!r}") from exc
        try:
            if problem:
                raise MarketDataError(f"{path}: {day} {problem}")
            grids.append(PriceGrid(day, prices, points_per_day))
        except MarketDataError as exc:
            if report is None:
                raise
            report.drop(day, str(exc))
    return grids


def grids_frame(grids: Sequence[PriceGrid]) -> pd.DataFrame:
    """Long-layout frame ``date,slot,price``."""
    if not grids:
        return pd.DataFrame(columns=["date", "slot", "price"])
    ppd = grids[0].points_per_day
    return pd.DataFrame(
        {
            "date": np.repeat([g.day.isoformat() for g in grids], ppd),
            "slot": np.tile(np.arange(ppd), len(grids)),
            "price": np.concatenate([g.prices for g in grids]),
        }
    )
