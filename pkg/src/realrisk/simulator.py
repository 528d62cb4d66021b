"""Discrete jump-diffusion paths on the intraday grid with a ground-truth ledger.

Returns follow an Euler step at grid resolution,

    r_j = mu * dt + sigma_j * sqrt(dt) * z_j + kappa_j,

with at most one Poisson jump per slot plus optional deterministic bursts of
consecutive same-size jumps. ``dt`` is one slot measured in days.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

from .marketdata import DEFAULT_POINTS_PER_DAY, PriceGrid, ReturnGrid


@dataclass(frozen=True)
class Burst:
    start_slot: int
    length: int
    size: float


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``sigma`` is volatility per square-root day: a scalar, an intraday schedule
    of length ``points_per_day``, or a ``(days, points_per_day)`` array.
    Jump sizes are normal with ``jump_mean``/``jump_std`` in return units.
    """

    mu: float = 0.0
    sigma: float | Sequence[float] | np.ndarray = 0.02
    jump_intensity: float = 0.0
    jump_mean: float = 0.0
    jump_std: float = 0.0
    burst: Burst | None = None
    points_per_day: int = DEFAULT_POINTS_PER_DAY
    days: int = 1
    seed: int = 0
    initial_price: float = 100.0
    start_date: dt.date = dt.date(2020, 1, 1)

    def __post_init__(self):
        if self.days < 1 or self.points_per_day < 2:
            raise ValueError("days must be >= 1 and points_per_day >= 2")
        sig = np.asarray(self.sigma, dtype=float)
        if sig.ndim == 1 and sig.shape != (self.points_per_day,):
            raise ValueError(f"intraday sigma schedule needs {self.points_per_day} entries")
        if sig.ndim == 2 and sig.shape != (self.days, self.points_per_day):
            raise ValueError(f"sigma array needs shape ({self.days}, {self.points_per_day})")
        if sig.ndim > 2 or np.any(sig < 0) or not np.all(np.isfinite(sig)):
            raise ValueError("sigma must be finite and non-negative")
        if self.jump_intensity < 0 or self.jump_std < 0:
            raise ValueError("jump_intensity and jump_std must be non-negative")
        if self.burst is not None:
            b = self.burst
            if not (0 <= b.start_slot and b.length >= 0 and b.start_slot + b.length <= self.points_per_day):
                raise ValueError("burst must fit inside one day")
            if b.length >= self.points_per_day:
                raise ValueError("burst length must be shorter than the day")
        if not self.initial_price > 0:
            raise ValueError("initial_price must be positive")

    def sigma_grid(self, days: slice | None = None) -> np.ndarray:
        sig = np.asarray(self.sigma, dtype=float)
        if sig.ndim == 2:
            return sig if days is None else sig[days]
        n = self.days if days is None else len(range(*days.indices(self.days)))
        return np.broadcast_to(sig, (n, self.points_per_day))


@dataclass
class SimPath:
    grids: list[PriceGrid]
    returns: np.ndarray
    true_iv: np.ndarray
    true_jumps: list[list[tuple[int, float]]]
    seed: int
    config: SimConfig = field(repr=False, default=None)

    @property
    def days(self) -> list[dt.date]:
        return [g.day for g in self.grids]

    def return_grids(self) -> list[ReturnGrid]:
        return [ReturnGrid(g.day, r) for g, r in zip(self.grids, self.returns)]

    def true_jump_variation(self) -> np.ndarray:
        return np.array([sum(k * k for _, k in day) for day in self.true_jumps])

    def ledger(self) -> dict:
        return {
            "seed": self.seed,
            "points_per_day": self.returns.shape[1],
            "days": [
                {
                    "date": g.day.isoformat(),
                    "true_iv": float(iv),
                    "jumps": [{"slot": int(s), "size": float(k)} for s, k in jumps],
                }
                for g, iv, jumps in zip(self.grids, self.true_iv, self.true_jumps)
            ],
        }

    def ledger_json(self) -> str:
        return json.dumps(self.ledger(), indent=2, sort_keys=True)


def _draw(cfg: SimConfig, rng_z, rng_arrival, rng_size, rows: slice):
    sig = cfg.sigma_grid(rows)
    n_days, points = sig.shape
    step = 1.0 / points
    r = cfg.mu * step + sig * math.sqrt(step) * rng_z.standard_normal((n_days, points))
    kappa = np.zeros_like(r)
    if cfg.jump_intensity > 0:
        hit = rng_arrival.random((n_days, points)) < -math.expm1(-cfg.jump_intensity * step)
        kappa[hit] = rng_size.normal(cfg.jump_mean, cfg.jump_std, size=int(hit.sum()))
    if cfg.burst is not None and cfg.burst.length > 0:
        b = cfg.burst
        kappa[:, b.start_slot : b.start_slot + b.length] += b.size
    iv = (sig * sig).sum(axis=1) * step
    return r + kappa, kappa, iv


def _streams(seed: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def simulate_returns(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw ``(returns, jumps, true_iv)`` arrays, without building price grids."""
    r, kappa, iv = _draw(cfg, *_streams(cfg.seed), slice(None))
    return r, kappa, iv


def iter_return_blocks(cfg: SimConfig, block_days: int) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield ``(returns, jumps, true_iv)`` blocks so long Monte Carlo runs stay in memory.

    Each block seeds its own child streams, so the output depends on
    ``block_days`` as well as on the seed.
    """
    n_blocks = -(-cfg.days // block_days)
    for i, child in enumerate(np.random.SeedSequence(cfg.seed).spawn(n_blocks)):
        rows = slice(i * block_days, min(cfg.days, (i + 1) * block_days))
        streams = [np.random.default_rng(s) for s in child.spawn(3)]
        yield _draw(cfg, *streams, rows)


def simulate(cfg: SimConfig) -> SimPath:
    """Simulate ``cfg.days`` days; deterministic given the config.

    The path is anchored at ``initial_price`` at the close of the first slot,
    so the first day's first return is 0 and is excluded from its true IV.
    This keeps the ledger consistent with returns recomputed from the grids,
    whose first return has no previous close.
    """
    r, kappa, iv = simulate_returns(cfg)
    step = 1.0 / cfg.points_per_day
    s0 = cfg.sigma_grid(slice(0, 1))[0, 0]
    iv[0] -= s0 * s0 * step
    r[0, 0] = 0.0
    kappa[0, 0] = 0.0
    prices = cfg.initial_price * np.exp(np.cumsum(r.ravel()).reshape(r.shape))
    grids = [
        PriceGrid(cfg.start_date + dt.timedelta(days=d), prices[d], cfg.points_per_day)
        for d in range(cfg.days)
    ]
    jumps = [[(int(s), float(kappa[d, s])) for s in np.flatnonzero(kappa[d])] for d in range(cfg.days)]
    return SimPath(grids, r, iv, jumps, cfg.seed, cfg)


def consecutive_burst_scenario(base: SimConfig) -> SimPath:
    """Path whose every day carries the burst of adjacent same-sign jumps in ``base.burst``."""
    if base.burst is None:
        raise ValueError("consecutive_burst_scenario needs a burst in the config")
    return simulate(base)


def log_ar_sigma(days: int, sigma: float, persistence: float, vol_of_vol: float, seed: int) -> np.ndarray:
    """Daily piecewise-constant sigma levels whose log follows a stationary AR(1) around ``log(sigma)``.

    Gives HAR-style volatility clustering while each day's sigma stays constant
    within the day.
    """
    if not 0 <= persistence < 1:
        raise ValueError("persistence must lie in [0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    x = np.empty(days)
    x[0] = rng.normal(0.0, vol_of_vol / math.sqrt(1 - persistence**2))
    eps = rng.normal(0.0, vol_of_vol, size=days)
    for t in range(1, days):
        x[t] = persistence * x[t - 1] + eps[t]
    return sigma * np.exp(x - 0.5 * vol_of_vol**2 / (1 - persistence**2))


def with_daily_sigma(cfg: SimConfig, levels: np.ndarray) -> SimConfig:
    levels = np.asarray(levels, dtype=float)
    return replace(cfg, sigma=np.repeat(levels[:, None], cfg.points_per_day, axis=1))


def ledger_frame(path: SimPath) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "date": [d.isoformat() for d in path.days],
            "true_iv": path.true_iv,
            "true_jump_variation": path.true_jump_variation(),
            "n_jumps": [len(j) for j in path.true_jumps],
        }
    )
