"""Daily realized risk estimators.

Every function works on the last axis, so a single day (shape ``(P,)``) or a
block of days (shape ``(D, P)``) can be passed. Variance-like outputs are in
per-day return-variance units; annualization is applied by the caller.

In the threshold estimators, returns whose square exceeds ``theta = c**2 * V``
(``V`` a local spot-variance estimate) are replaced by their conditional
expectation under a normal law before forming multipower products.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import special

from .marketdata import ReturnGrid

MU1 = math.sqrt(2.0 / math.pi)
ZETA = math.pi**2 / 4 + math.pi - 5

RECORD_COLUMNS = (
    "day",
    "rv",
    "rsv_pos",
    "rsv_neg",
    "bpv",
    "tbpv",
    "ttpv",
    "tz",
    "jump_uncorrected",
    "jump_sq",
    "jump_pos_sq",
    "jump_neg_sq",
    "continuous",
)
VARIANCE_COLUMNS = (
    "rv",
    "rsv_pos",
    "rsv_neg",
    "bpv",
    "tbpv",
    "jump_uncorrected",
    "jump_sq",
    "jump_pos_sq",
    "jump_neg_sq",
    "continuous",
)


def abs_moment(eta: float) -> float:
    """E|Z|**eta for a standard normal Z."""
    return 2 ** (eta / 2) * math.gamma((eta + 1) / 2) / math.sqrt(math.pi)


@dataclass(frozen=True)
class ThresholdSpec:
    c: float = 3.0
    alpha: float = 1e-4
    bandwidth: int = 25
    tol: float = 1e-6
    max_iter: int = 100

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"threshold multiple c must be positive, got {self.c}")
        if not 0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if self.bandwidth < 2:
            raise ValueError(f"bandwidth must be at least 2, got {self.bandwidth}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    @property
    def critical_value(self) -> float:
        # upper-tail quantile taken as -ndtri(alpha): no cancellation in 1 - alpha
        return float(-special.ndtri(self.alpha))


@dataclass(frozen=True)
class LocalVarianceTrack:
    """Per-slot spot variance of a single grid return.

    For a block of days ``iterations`` and ``converged`` are per-day arrays.
    """

    values: np.ndarray
    iterations: int | np.ndarray
    converged: bool | np.ndarray

    def thresholds(self, c: float) -> np.ndarray:
        return c * c * self.values


def _returns(g) -> np.ndarray:
    if isinstance(g, ReturnGrid):
        return g.returns
    return np.asarray(g, dtype=float)


def realized_variance(g) -> np.ndarray | float:
    r = _returns(g)
    return np.sum(r * r, axis=-1)


def realized_semivariance(g, sign: str | int) -> np.ndarray | float:
    """Sum of squared positive (``'+'``) or negative (``'-'``) returns; zeros count in neither."""
    r = _returns(g)
    if sign in ("+", 1, "pos"):
        keep = r > 0
    elif sign in ("-", -1, "neg"):
        keep = r < 0
    else:
        raise ValueError(f"sign must be '+' or '-', got {sign!r}")
    return np.sum(np.where(keep, r * r, 0.0), axis=-1)


def bipower_variance(g) -> np.ndarray | float:
    a = np.abs(_returns(g))
    if a.shape[-1] < 2:
        raise ValueError("bipower variance needs at least two returns")
    return np.sum(a[..., 1:] * a[..., :-1], axis=-1) / MU1**2


def uncorrected_jump(rv, bpv):
    return np.maximum(np.asarray(rv) - np.asarray(bpv), 0.0)


@lru_cache(maxsize=16)
def _kernel_matrix(points: int, bandwidth: int) -> np.ndarray:
    """Gaussian weights K(i/l) for neighbours 2 <= |i| <= l, zero elsewhere."""
    lag = np.arange(points)[None, :] - np.arange(points)[:, None]
    w = np.exp(-0.5 * (lag / bandwidth) ** 2)
    w[(np.abs(lag) < 2) | (np.abs(lag) > bandwidth)] = 0.0
    w.setflags(write=False)
    return w


def local_variance(g, spec: ThresholdSpec = ThresholdSpec()) -> LocalVarianceTrack:
    """Iterated truncated Gaussian-kernel estimate of the spot variance, within each day.

    The recursion starts from the day's sample variance at every slot, with
    every return admitted at the first step. From then on a neighbour enters the
    kernel average only if its squared return is at most ``c**2`` times its own
    previous estimate. Edge slots use the
    part of the kernel window inside the day. Iteration stops once the largest
    relative change is below ``spec.tol``. A day is flagged not converged when
    some slot's whole window is excluded (that slot keeps its previous value),
    when ``spec.max_iter`` is reached, or when the exclusion pattern repeats the
    one from two steps earlier: the update is a function of the pattern alone,
    so the recursion is then periodic.
    """
    r = _returns(g)
    single = r.ndim == 1
    r2 = np.atleast_2d(r * r)
    n_days, points = r2.shape
    wt = _kernel_matrix(points, spec.bandwidth).T
    c2 = spec.c * spec.c

    v = np.repeat(np.var(np.atleast_2d(r), axis=1, ddof=1, keepdims=True), points, axis=1)
    iterations = np.zeros(n_days, dtype=np.int64)
    converged = np.zeros(n_days, dtype=bool)
    active = np.arange(n_days)
    keep_lag1 = keep_lag2 = None
    for step in range(1, spec.max_iter + 1):
        v_prev = v[active]
        r2a = r2[active]
        keep = np.ones_like(r2a, dtype=bool) if step == 1 else r2a <= c2 * v_prev
        num = np.where(keep, r2a, 0.0) @ wt
        den = keep.astype(float) @ wt
        empty = den <= 0.0
        v_new = np.where(empty, v_prev, num / np.where(empty, 1.0, den))
        scale = np.maximum(v_prev, v_new)
        diff = np.abs(v_new - v_prev)
        change = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0).max(axis=1)
        v[active] = v_new
        iterations[active] = step
        settled = change < spec.tol
        converged[active[settled]] = ~empty[settled].any(axis=1)
        stop = settled.copy()
        if keep_lag2 is not None:
            stop |= (keep == keep_lag2).all(axis=1)
        active = active[~stop]
        if active.size == 0:
            break
        keep_lag2 = keep_lag1[~stop] if keep_lag1 is not None else None
        keep_lag1 = keep[~stop]

    if single:
        return LocalVarianceTrack(v[0], int(iterations[0]), bool(converged[0]))
    return LocalVarianceTrack(v, iterations, converged)


def expected_truncated_return(theta, eta: float, c: float, with_flag: bool = False):
    """E[|r|**eta | r**2 > theta] for r ~ N(0, theta / c**2).

    Uses the upper incomplete gamma function ``Gamma((eta+1)/2, c**2/2)``.
    Values at or below zero ``theta`` are 0. When the normal tail or the gamma
    tail underflows the result is 0 and, with ``with_flag``, the flag is True.
    """
    if not (eta > 0 and c > 0):
        raise ValueError("eta and c must be positive")
    theta = np.asarray(theta, dtype=float)
    a = (eta + 1) / 2
    upper = special.gammaincc(a, c * c / 2) * special.gamma(a)
    tail = special.ndtr(-c)
    underflow = bool(tail == 0.0 or upper == 0.0)
    if underflow:
        value = np.zeros_like(theta)
    else:
        const = upper / (2 * math.sqrt(math.pi) * tail)
        value = np.where(theta > 0, const * (2 * np.maximum(theta, 0.0) / (c * c)) ** (eta / 2), 0.0)
    if value.ndim == 0:
        value = float(value)
    return (value, underflow) if with_flag else value


def corrected_return(r, theta, eta: float, c: float):
    """``|r|**eta`` when ``r**2 <= theta``, else the conditional expectation beyond the threshold."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    r, theta = np.broadcast_arrays(r, theta)
    out = np.array(np.abs(r) ** eta, dtype=float, ndmin=1).reshape(r.shape)
    over = r * r > theta
    if over.any():
        out[over] = expected_truncated_return(theta[over], eta, c)
    return float(out) if out.ndim == 0 else out


def _thresholds(track, c: float) -> np.ndarray:
    if isinstance(track, LocalVarianceTrack):
        return track.thresholds(c)
    return c * c * np.asarray(track, dtype=float)


def threshold_multipower(
    g,
    powers: Sequence[float],
    track: LocalVarianceTrack | np.ndarray,
    spec: ThresholdSpec = ThresholdSpec(),
):
    """Corrected threshold multipower variation with exponents ``powers``.

    ``track`` is the local variance (a :class:`LocalVarianceTrack` or raw
    per-slot values) aligned with the returns.
    """
    powers = list(powers)
    if not powers:
        raise ValueError("threshold_multipower needs at least one power")
    r = _returns(g)
    theta = _thresholds(track, spec.c)
    if theta.shape != r.shape:
        raise ValueError(f"local variance shape {theta.shape} does not match returns {r.shape}")
    points = r.shape[-1]
    m = len(powers)
    if points < m:
        raise ValueError(f"need at least {m} returns for {m} powers")
    factors = {eta: np.asarray(corrected_return(r, theta, eta, spec.c)) for eta in set(powers)}
    total = np.ones(r.shape[:-1] + (points - m + 1,))
    for k, eta in enumerate(powers):
        total = total * factors[eta][..., m - 1 - k : points - k]
    scale = math.prod(1.0 / abs_moment(eta) for eta in powers)
    scale *= (1.0 / points) ** (1.0 - sum(powers) / 2.0)
    return scale * total.sum(axis=-1)


def tbpv(g, track, spec: ThresholdSpec = ThresholdSpec()):
    return threshold_multipower(g, (1.0, 1.0), track, spec)


def ttpv(g, track, spec: ThresholdSpec = ThresholdSpec()):
    return threshold_multipower(g, (4 / 3, 4 / 3, 4 / 3), track, spec)


def jump_test_statistic(rv, tbpv, ttpv, delta):
    """Studentized relative jump measure; 0 on days without variation, +inf when TBPV vanishes."""
    rv = np.asarray(rv, dtype=float)
    tb = np.asarray(tbpv, dtype=float)
    tt = np.asarray(ttpv, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(tb > 0, tt / np.where(tb > 0, tb * tb, 1.0), 1.0)
        denom = np.sqrt(delta * ZETA * np.maximum(1.0, ratio))
        stat = (rv - tb) / np.where(rv > 0, rv, 1.0) / denom
    stat = np.where(rv > 0, np.where(tb > 0, stat, np.inf), 0.0)
    return float(stat) if stat.ndim == 0 else stat


def uncorrected_test_statistic(g):
    """The same studentized statistic built on plain BPV and untruncated tripower quarticity."""
    r = _returns(g)
    no_cut = np.full(r.shape, np.inf)
    tp = threshold_multipower(r, (4 / 3, 4 / 3, 4 / 3), no_cut)
    return jump_test_statistic(realized_variance(r), bipower_variance(r), tp, 1.0 / r.shape[-1])


def significant_jump(rv, tbpv, tz, alpha: float):
    crit = ThresholdSpec(alpha=alpha).critical_value
    out = np.maximum(np.asarray(rv) - np.asarray(tbpv), 0.0) * (np.asarray(tz) > crit)
    return float(out) if np.ndim(out) == 0 else out


def signed_jumps(rsv_pos, rsv_neg, tbpv, jump_sq):
    on = np.asarray(jump_sq) > 0
    half = 0.5 * np.asarray(tbpv)
    pos = np.maximum(np.asarray(rsv_pos) - half, 0.0) * on
    neg = np.maximum(np.asarray(rsv_neg) - half, 0.0) * on
    if np.ndim(pos) == 0:
        return float(pos), float(neg)
    return pos, neg


def continuous_component(rv, jump_sq):
    return np.asarray(rv) - np.asarray(jump_sq)


@dataclass(frozen=True)
class DailyRiskRecord:
    day: dt.date
    rv: float
    rsv_pos: float
    rsv_neg: float
    bpv: float
    tbpv: float
    ttpv: float
    tz: float
    jump_uncorrected: float
    jump_sq: float
    jump_pos_sq: float
    jump_neg_sq: float
    continuous: float

    def as_dict(self) -> dict:
        return asdict(self)


def estimate_block(returns: np.ndarray, spec: ThresholdSpec = ThresholdSpec()) -> dict[str, np.ndarray]:
    """All daily estimators for a ``(D, P)`` block of return grids, as column arrays."""
    r = np.atleast_2d(np.asarray(returns, dtype=float))
    delta = 1.0 / r.shape[1]
    rv = realized_variance(r)
    rsv_pos = realized_semivariance(r, "+")
    rsv_neg = realized_semivariance(r, "-")
    bpv = bipower_variance(r)
    track = local_variance(r, spec)
    tb = tbpv(r, track, spec)
    tt = ttpv(r, track, spec)
    tz = jump_test_statistic(rv, tb, tt, delta)
    jump_sq = significant_jump(rv, tb, tz, spec.alpha)
    jpos, jneg = signed_jumps(rsv_pos, rsv_neg, tb, jump_sq)
    return {
        "rv": rv,
        "rsv_pos": rsv_pos,
        "rsv_neg": rsv_neg,
        "bpv": bpv,
        "tbpv": tb,
        "ttpv": tt,
        "tz": np.asarray(tz, dtype=float),
        "jump_uncorrected": uncorrected_jump(rv, bpv),
        "jump_sq": jump_sq,
        "jump_pos_sq": jpos,
        "jump_neg_sq": jneg,
        "continuous": continuous_component(rv, jump_sq),
        "lv_converged": np.asarray(track.converged),
    }


def estimate_day(g: ReturnGrid, spec: ThresholdSpec = ThresholdSpec()) -> DailyRiskRecord:
    cols = estimate_block(g.returns[None, :], spec)
    return DailyRiskRecord(g.day, *(float(cols[c][0]) for c in RECORD_COLUMNS[1:]))


def estimate_days(
    grids: Sequence[ReturnGrid],
    spec: ThresholdSpec = ThresholdSpec(),
    chunk_days: int = 4096,
) -> pd.DataFrame:
    """Daily record table, one row per grid, columns in :data:`RECORD_COLUMNS` order."""
    if not grids:
        return pd.DataFrame(columns=list(RECORD_COLUMNS))
    points = {g.points_per_day for g in grids}
    if len(points) != 1:
        raise ValueError(f"grids mix points_per_day values {sorted(points)}")
    block = np.vstack([g.returns for g in grids])
    parts = [estimate_block(block[i : i + chunk_days], spec) for i in range(0, len(block), chunk_days)]
    frame = pd.DataFrame({c: np.concatenate([p[c] for p in parts]) for c in RECORD_COLUMNS[1:]})
    frame.insert(0, "day", [g.day for g in grids])
    return frame


def annualize(records: pd.DataFrame, factor: float) -> pd.DataFrame:
    """Scale variance columns by ``factor`` and quarticity by ``factor**2``; ``tz`` is unit-free."""
    out = records.copy()
    for col in VARIANCE_COLUMNS:
        out[col] = out[col] * factor
    out["ttpv"] = out["ttpv"] * factor**2
    return out
