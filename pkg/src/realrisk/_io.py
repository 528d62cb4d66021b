"""Atomic file output, content hashing and run manifests."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
import platform
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .estimators import RECORD_COLUMNS


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_csv(path: str | Path, frame: pd.DataFrame) -> None:
    atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def versions() -> dict:
    return {
        "realrisk": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


class ManifestMismatch(RuntimeError):
    pass


def manifest_path(out_dir: str | Path, command: str) -> Path:
    return Path(out_dir) / f"manifest_{command}.json"


def check_resume(out_dir: str | Path, command: str, cfg_hash: str) -> None:
    """Refuse to write into a directory whose earlier run of ``command`` used another config."""
    path = manifest_path(out_dir, command)
    if not path.exists():
        return
    try:
        old = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestMismatch(f"{path} is unreadable: {exc}") from exc
    if old.get("config_hash") != cfg_hash:
        raise ManifestMismatch(
            f"{path} was written with config {old.get('config_hash', '?')[:12]}, this run has {cfg_hash[:12]}; "
            "use a fresh output directory"
        )


def write_manifest(out_dir, command: str, config: dict, inputs, outputs, notes=()) -> dict:
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
        "versions": versions(),
        "notes": list(notes),
        "created": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }
    write_json(manifest_path(out_dir, command), manifest)
    return manifest


def records_frame_for_csv(records: pd.DataFrame) -> pd.DataFrame:
    out = records.copy()
    out["day"] = [d.isoformat() if hasattr(d, "isoformat") else str(d) for d in out["day"]]
    return out


def read_records_csv(path: str | Path) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip")
    missing = set(RECORD_COLUMNS) - set(df.columns)
    if missing:
        raise ValueError(f"{path}: missing record columns {sorted(missing)}")
    df = df[list(RECORD_COLUMNS)].copy()
    df["day"] = [dt.date.fromisoformat(str(d)) for d in df["day"]]
    return df


def read_forecasts_csv(path: str | Path) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip")
    need = {"date", "model", "h", "forecast_var", "realized_var", "filtered"}
    missing = need - set(df.columns)
    if missing:
        raise ValueError(f"{path}: missing forecast columns {sorted(missing)}")
    return df
