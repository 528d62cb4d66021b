"""Command-line front end: simulate, estimate, describe, forecast, evaluate, pipeline.

Configuration is layered: built-in defaults, then a JSON file (``--config``),
then ``REALRISK_<KEY>`` environment variables, then command-line flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import _io
from .describe import acf_frame, describe_records, kde_frame
from .estimators import ThresholdSpec, annualize, estimate_days
from .evaluation import METRICS, EvaluationConfig, UtilityConfig, evaluate
from .forecast import ForecastError, RollingConfig, coefficient_table, fit_full_sample, run_rolling
from .marketdata import CleaningReport, MarketDataError, grids_frame, grids_to_returns, read_grid_csv, read_ticks_csv, resample_last_tick
from .models import DesignConfig, DesignError, ModelKind
from .regression import RankDeficientError
from .simulator import SimConfig, log_ar_sigma, simulate, with_daily_sigma

log = logging.getLogger("realrisk")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3, 4
ENV_PREFIX = "REALRISK_"
DESCRIBE_COLUMNS = ("rv", "rsv_pos", "rsv_neg", "bpv", "tbpv", "continuous", "jump_sq", "jump_pos_sq", "jump_neg_sq")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    input: str | None = None
    output: str = "out"
    points_per_day: int = 288
    c: float = 3.0
    alpha: float = 1e-4
    bandwidth: int = 25
    annualization: float = 365.0
    jump_scale: str = "squared"
    horizons: list[int] = field(default_factory=lambda: [1, 7, 30])
    models: list[str] = field(default_factory=lambda: [k.value for k in ModelKind])
    window: int = 90
    hac_lags: dict[str, int] = field(default_factory=lambda: {"1": 7, "7": 14, "30": 60})
    insanity: bool = True
    bias_correction: bool = False
    sharpe: float = 0.4
    gamma: float = 2.0
    utility_units: str = "table"
    kde_bandwidth: float = 1.5
    # simulate
    seed: int = 0
    days: int = 600
    sigma: float = 0.03
    mu: float = 0.0
    jump_intensity: float = 0.5
    jump_mean: float = 0.0
    jump_std: float = 0.01
    vol_persistence: float = 0.95
    vol_of_vol: float = 0.15

    def validate(self) -> None:
        if not self.horizons or any(int(h) < 1 for h in self.horizons):
            raise ConfigError("horizons must be a non-empty list of positive integers")
        if self.jump_scale not in ("squared", "root"):
            raise ConfigError(f"jump_scale must be 'squared' or 'root', got {self.jump_scale!r}")
        if self.utility_units not in ("table", "daily"):
            raise ConfigError("utility_units must be 'table' or 'daily'")
        bad = [m for m in self.models if m not in {k.value for k in ModelKind}]
        if bad:
            raise ConfigError(f"unknown models {bad}")
        if self.window < 15 or self.points_per_day < 2 or self.bandwidth < 2:
            raise ConfigError("window >= 15, points_per_day >= 2 and bandwidth >= 2 are required")
        if not (0 < self.alpha < 1 and self.c > 0 and self.sharpe > 0 and self.gamma > 0 and self.annualization > 0):
            raise ConfigError("alpha must lie in (0, 1); c, sharpe, gamma and annualization must be positive")

    def threshold(self) -> ThresholdSpec:
        return ThresholdSpec(c=self.c, alpha=self.alpha, bandwidth=self.bandwidth)

    def design(self) -> DesignConfig:
        return DesignConfig(annualization=self.annualization, jump_scale=self.jump_scale)

    def rolling(self) -> RollingConfig:
        return RollingConfig(self.window, {int(k): int(v) for k, v in self.hac_lags.items()}, self.insanity, self.bias_correction)

    def evaluation(self) -> EvaluationConfig:
        return EvaluationConfig(UtilityConfig(self.sharpe, self.gamma), self.utility_units, self.annualization)

    def subset(self, keys) -> dict:
        d = asdict(self)
        return {k: d[k] for k in keys}


# config keys that determine each command's outputs; they feed the manifest hash
ESTIMATE_KEYS = ("points_per_day", "c", "alpha", "bandwidth")
DESCRIBE_KEYS = ("annualization", "kde_bandwidth")
FORECAST_KEYS = ("annualization", "jump_scale", "horizons", "models", "window", "hac_lags", "insanity", "bias_correction")
EVALUATE_KEYS = ("sharpe", "gamma", "utility_units", "annualization")
SIMULATE_KEYS = ("seed", "days", "sigma", "mu", "jump_intensity", "jump_mean", "jump_std",
                 "vol_persistence", "vol_of_vol", "points_per_day")
PIPELINE_KEYS = tuple(dict.fromkeys(ESTIMATE_KEYS + DESCRIBE_KEYS + FORECAST_KEYS + EVALUATE_KEYS))


def _coerce(name: str, raw, default):
    """Parse an override into the type of the field's default."""
    try:
        if isinstance(raw, str) and isinstance(default, (list, dict)):
            raw = json.loads(raw)
        if isinstance(default, bool):
            if isinstance(raw, str):
                if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValueError(raw)
                return raw.lower() in ("1", "true", "yes")
            return bool(raw)
        if isinstance(default, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [int(x) if name == "horizons" else str(x) for x in raw]
        if isinstance(default, dict):
            return {str(k): int(v) for k, v in raw.items()}
        return None if raw is None else str(raw)
    except (TypeError, ValueError, AttributeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def load_config(path: str | None, flags: dict, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    cfg = RunConfig()
    defaults = asdict(cfg)
    layers = []
    if path:
        try:
            layers.append(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(layers[0], dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(layers[0]) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
    layers.append({k: environ[ENV_PREFIX + k.upper()] for k in defaults if ENV_PREFIX + k.upper() in environ})
    layers.append({k: v for k, v in flags.items() if k in defaults and v is not None})
    for layer in layers:
        for k, v in layer.items():
            setattr(cfg, k, _coerce(k, v, defaults[k]))
    cfg.validate()
    return cfg


# -- commands ------------------------------------------------------------------


def _read_grids(path: str, points: int) -> tuple[list, CleaningReport]:
    if not Path(path).exists():
        raise FileNotFoundError(f"input {path} does not exist")
    head = pd.read_csv(path, nrows=0).columns
    if "timestamp" in head:
        return resample_last_tick(read_ticks_csv(path), points)
    report = CleaningReport()
    return read_grid_csv(path, points, report), report


def run_estimate(cfg: RunConfig, out: Path) -> list[Path]:
    if not cfg.input:
        raise ConfigError("estimate needs --input")
    grids, report = _read_grids(cfg.input, cfg.points_per_day)
    if not grids:
        raise MarketDataError("no complete trading days in the input")
    records = estimate_days(grids_to_returns(grids), cfg.threshold())
    paths = [out / "records.csv", out / "cleaning.json"]
    _io.write_csv(paths[0], _io.records_frame_for_csv(records))
    _io.write_json(paths[1], report.to_dict())
    return paths


def run_describe(cfg: RunConfig, out: Path, records_path: Path) -> list[Path]:
    records = annualize(_io.read_records_csv(records_path), cfg.annualization)
    if records.empty:
        raise MarketDataError("no records to describe")
    cols = list(DESCRIBE_COLUMNS)
    paths = [out / "describe_stats.csv", out / "describe_acf.csv", out / "describe_kde.csv"]
    _io.write_csv(paths[0], describe_records(records, cols))
    _io.write_csv(paths[1], acf_frame(records, cols))
    _io.write_csv(paths[2], kde_frame(records, cols, cfg.kde_bandwidth))
    return paths


def run_forecast(cfg: RunConfig, out: Path, records_path: Path) -> tuple[list[Path], list[str]]:
    records = _io.read_records_csv(records_path)
    design, rolling = cfg.design(), cfg.rolling()
    fits = [
        fit_full_sample(k, records, h, design, rolling.hac_lags)
        for h in cfg.horizons for k in cfg.models
    ]
    result = run_rolling(records, cfg.models, cfg.horizons, design, rolling)
    notes = ["rolling window counts usable design rows, not calendar days", *result.notes]
    paths = [out / "full_sample.csv", out / "forecasts.csv"]
    _io.write_csv(paths[0], coefficient_table(fits))
    _io.write_csv(paths[1], result.forecasts)
    for (kind, h), part in result.coefficients.groupby(["model", "h"], sort=True):
        p = out / f"coefficients_{kind}_h{h}.csv"
        _io.write_csv(p, part)
        paths.append(p)
    return paths, notes


def run_evaluate(cfg: RunConfig, out: Path, forecasts_path: Path) -> tuple[list[Path], list[str]]:
    report = evaluate(_io.read_forecasts_csv(forecasts_path), cfg.evaluation())
    paths = [out / "evaluation.json"]
    _io.write_json(paths[0], report.to_dict())
    for metric in METRICS:
        p = out / f"table_{metric}.csv"
        _io.write_csv(p, report.table(metric))
        paths.append(p)
    dm = out / "diebold_mariano.csv"
    _io.write_csv(dm, report.dm)
    paths.append(dm)
    return paths, report.notes


def run_simulate(cfg: RunConfig, out: Path) -> list[Path]:
    base = SimConfig(mu=cfg.mu, sigma=cfg.sigma, jump_intensity=cfg.jump_intensity, jump_mean=cfg.jump_mean,
                     jump_std=cfg.jump_std, points_per_day=cfg.points_per_day, days=cfg.days, seed=cfg.seed)
    if cfg.vol_of_vol > 0:
        base = with_daily_sigma(base, log_ar_sigma(cfg.days, cfg.sigma, cfg.vol_persistence, cfg.vol_of_vol, cfg.seed))
    path = simulate(base)
    paths = [out / "grid.csv", out / "ledger.json"]
    _io.write_csv(paths[0], grids_frame(path.grids))
    _io.write_json(paths[1], path.ledger())
    return paths


# -- entry point ---------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it and REALRISK_* variables")
    p.add_argument("--output", "-o", help="output directory")
    p.add_argument("--points-per-day", type=int, dest="points_per_day")
    p.add_argument("--annualization", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="realrisk",
        description="Realized risk measures, HAR-family forecasts and their evaluation.",
        epilog=f"Any config key can also be set through an environment variable {ENV_PREFIX}<KEY> "
        f"(e.g. {ENV_PREFIX}WINDOW=120); command-line flags take precedence. "
        "Exit codes: 0 ok, 2 input error, 3 numerical failure, 4 config error.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a jump-diffusion grid with a ground-truth ledger")
    _add_common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--jump-intensity", type=float, dest="jump_intensity")
    p.add_argument("--jump-std", type=float, dest="jump_std")
    p.add_argument("--vol-of-vol", type=float, dest="vol_of_vol", help="0 for constant volatility")

    for name, helptext in (("estimate", "daily risk records from ticks or a price grid"),
                           ("pipeline", "estimate, describe, forecast and evaluate in one run")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        p.add_argument("--input", "-i", help="tick CSV (timestamp,price) or grid CSV (date,slot,price)")
        p.add_argument("--c", type=float, help="threshold multiplier")
        p.add_argument("--alpha", type=float, help="jump test level")
        p.add_argument("--bandwidth", type=int, help="local variance kernel bandwidth")
        if name == "pipeline":
            p.add_argument("--window", type=int)
            p.add_argument("--horizons", type=int, nargs="+")

    p = sub.add_parser("describe", help="summary statistics, ACF and KDE series of a record table")
    _add_common(p)
    p.add_argument("--input", "-i", help="records.csv")
    p.add_argument("--kde-bandwidth", type=float, dest="kde_bandwidth")

    p = sub.add_parser("forecast", help="full-sample fits and rolling forecasts")
    _add_common(p)
    p.add_argument("--input", "-i", help="records.csv")
    p.add_argument("--window", type=int)
    p.add_argument("--horizons", type=int, nargs="+")
    p.add_argument("--models", nargs="+")
    p.add_argument("--jump-scale", dest="jump_scale", choices=("squared", "root"))

    p = sub.add_parser("evaluate", help="losses, Diebold-Mariano tests and realized utility")
    _add_common(p)
    p.add_argument("--input", "-i", help="forecasts.csv")
    p.add_argument("--sharpe", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--utility-units", dest="utility_units", choices=("table", "daily"))
    return parser


def _input_path(cfg: RunConfig, name: str) -> Path:
    if not cfg.input:
        raise ConfigError("--input is required")
    p = Path(cfg.input)
    if not p.exists():
        raise FileNotFoundError(f"{name} input {p} does not exist")
    return p


def execute(command: str, cfg: RunConfig) -> Path:
    """Run ``command``; outputs are staged and moved into place only once every step succeeded."""
    final = Path(cfg.output)
    keys = {
        "simulate": SIMULATE_KEYS, "estimate": ESTIMATE_KEYS, "describe": DESCRIBE_KEYS,
        "forecast": FORECAST_KEYS, "evaluate": EVALUATE_KEYS, "pipeline": PIPELINE_KEYS,
    }[command]
    config = cfg.subset(keys)
    _io.check_resume(final, command, _io.config_hash(config))
    final.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=final, prefix=".staging-") as staging:
        outputs, inputs, notes = _dispatch(command, cfg, Path(staging))
        moved = []
        for p in outputs:
            target = final / p.name
            os.replace(p, target)
            moved.append(target)
    _io.write_manifest(final, command, config, inputs, moved, notes)
    return final


def _dispatch(command: str, cfg: RunConfig, out: Path):
    notes: list[str] = []
    inputs: list[Path] = []
    if command == "simulate":
        outputs = run_simulate(cfg, out)
    elif command == "estimate":
        inputs = [_input_path(cfg, "estimate")]
        outputs = run_estimate(cfg, out)
    elif command == "describe":
        inputs = [_input_path(cfg, "describe")]
        outputs = run_describe(cfg, out, inputs[0])
    elif command == "forecast":
        inputs = [_input_path(cfg, "forecast")]
        outputs, notes = run_forecast(cfg, out, inputs[0])
    elif command == "evaluate":
        inputs = [_input_path(cfg, "evaluate")]
        outputs, notes = run_evaluate(cfg, out, inputs[0])
    else:
        inputs = [_input_path(cfg, "pipeline")]
        outputs = run_estimate(cfg, out)
        outputs += run_describe(cfg, out, out / "records.csv")
        fc, notes = run_forecast(cfg, out, out / "records.csv")
        ev, ev_notes = run_evaluate(cfg, out, out / "forecasts.csv")
        outputs += fc + ev
        notes += ev_notes
    return outputs, inputs, notes


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = load_config(args.config, flags)
        execute(args.command, cfg)
    except (ConfigError, _io.ManifestMismatch) as exc:
        return _fail(EXIT_CONFIG, exc)
    except (RankDeficientError, ForecastError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (MarketDataError, DesignError, FileNotFoundError, ValueError, KeyError, pd.errors.ParserError) as exc:
        return _fail(EXIT_INPUT, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
