"""Declarative run configuration: one JSON file drives every stage.

The file is validated up front (types, ranges, clock alignment) before any
stage computes; the raw dict is serialized verbatim into every output's
metadata so artifacts are self-describing.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from datetime import datetime
from zoneinfo import ZoneInfo

from .timebase import HOUR, StudyWindow, local_to_utc


class ConfigError(ValueError):
    """Invalid configuration or schema mismatch (CLI exit code 2)."""


DEFAULTS: dict = {
    "out": "runs/out",
    "seed": 20160718,
    "threads": 0,  # 0: leave BLAS/library defaults alone
    "timezone": "America/New_York",
    "study": {
        "field_start_local": "2016-07-18T00:00:00",
        "field_hours": 168,
        "window_start_local": "2016-07-18T00:00:00",
        "window_end_local": "2016-07-25T00:00:00",
        "night_start": "20:00",
        "night_end": "06:30",
    },
    "paths": {
        "monitors": None,
        "meteo": None,
        "towers": None,
        "roads": None,
        "handoffs": None,
    },
    "synth": {"preset": "desk"},
    "fit": {
        "phi": None,  # None: 3 / d_max over the training sites
        "burn_in": 1000,
        "keep": 4000,
        "thin_latent": 5,
        "ig_shape": 2.0,
        "ig_scale": 1.0,
        "beta_prior_var": 1e10,
        "validation_sites": None,  # None: take from the synth manifest
    },
    "predict": {"hour_start": None, "hour_count": None},
    "exposure": {
        "field": None,  # None: <out>/predict/field.csv
        "write_hourly": True,
        "min_window_hours": 6,
        "device_block": 32768,
    },
    "report": {
        "figures": True,
        "cohort_fraction": 0.01,
        "min_devices_per_tower": 5,
        "hist_min": -80.0,
        "hist_max": 80.0,
        "hist_bin_width": 1.0,
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and key != "synth":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _require_local_midnight(label: str, iso_local: str, tz: str) -> None:
    dt = datetime.fromisoformat(iso_local)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=ZoneInfo(tz))
    if (dt.hour, dt.minute, dt.second) != (0, 0, 0):
        raise ConfigError(f"{label} must fall on a local midnight, got {iso_local!r}")


@dataclass
class RunConfig:
    raw: dict  # merged config, serialized verbatim into output metadata
    out: str
    seed: int
    threads: int
    timezone: str
    field_start_utc: int
    field_hours: int
    window: StudyWindow

    def stage_dir(self, stage: str) -> str:
        return os.path.join(self.out, stage)

    def path(self, name: str) -> str:
        configured = self.raw["paths"].get(name)
        if configured:
            return configured
        return os.path.join(self.out, "synth", f"{name}.csv")

    @property
    def window_field_offset(self) -> int:
        return (self.window.start - self.field_start_utc) // HOUR

    def section(self, name: str) -> dict:
        return self.raw[name]


def build_config(data: dict) -> RunConfig:
    merged = _merge(DEFAULTS, data)
    if not isinstance(merged["seed"], int):
        raise ConfigError("seed must be an integer")
    if not isinstance(merged["threads"], int) or merged["threads"] < 0:
        raise ConfigError("threads must be a nonnegative integer")
    tz = merged["timezone"]
    try:
        ZoneInfo(tz)
    except Exception as exc:
        raise ConfigError(f"unknown timezone {tz!r}") from exc
    study = merged["study"]
    if not isinstance(study["field_hours"], int) or study["field_hours"] < 1:
        raise ConfigError("study.field_hours must be a positive integer")
    try:
        window = StudyWindow.from_local(
            study["window_start_local"],
            study["window_end_local"],
            tz,
            study["night_start"],
            study["night_end"],
        )
        field_start = local_to_utc(study["field_start_local"], tz)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid study section: {exc}") from exc
    _require_local_midnight("study.field_start_local", study["field_start_local"], tz)
    _require_local_midnight("study.window_start_local", study["window_start_local"], tz)
    if window.start < field_start:
        raise ConfigError("study window starts before the field clock")
    if (window.start - field_start) % HOUR != 0:
        raise ConfigError("study window is not aligned to the field hour grid")
    offset = (window.start - field_start) // HOUR
    if offset + window.n_hours > study["field_hours"]:
        raise ConfigError(
            f"study window needs field hours [{offset}, {offset + window.n_hours}) but the "
            f"field spans only [0, {study['field_hours']})"
        )
    fit = merged["fit"]
    for key in ("burn_in", "keep", "thin_latent"):
        if not isinstance(fit[key], int) or fit[key] < 1:
            raise ConfigError(f"fit.{key} must be a positive integer")
    if fit["phi"] is not None and fit["phi"] <= 0:
        raise ConfigError("fit.phi must be positive when set")
    rep = merged["report"]
    if not 0.0 < rep["cohort_fraction"] < 0.5:
        raise ConfigError("report.cohort_fraction must be in (0, 0.5)")
    if rep["hist_bin_width"] <= 0 or rep["hist_max"] <= rep["hist_min"]:
        raise ConfigError("invalid report histogram settings")
    exposure = merged["exposure"]
    if exposure["min_window_hours"] < 1 or exposure["min_window_hours"] > 8:
        raise ConfigError("exposure.min_window_hours must be in 1..8")
    return RunConfig(
        raw=merged,
        out=merged["out"],
        seed=merged["seed"],
        threads=merged["threads"],
        timezone=tz,
        field_start_utc=field_start,
        field_hours=study["field_hours"],
        window=window,
    )


def load_config(path: str, overrides: dict | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    if overrides:
        data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    return build_config(data)
