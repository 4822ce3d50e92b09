"""Stage runners: synth -> fit -> validate -> predict -> mobility -> expose
-> report, each independently re-runnable from its on-disk inputs.

Every stage writes its artifacts plus a meta.json carrying the verbatim
config, the seed, and content hashes of the inputs it read. No stage mutates
its inputs, and stage outputs contain no wall-clock material, so a rerun
with the same config and seed is byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import asdict

import numpy as np
import pandas as pd

from . import __version__
from .config import ConfigError, RunConfig
from .covariates import DESIGN_COLUMNS, build_design
from .geo import GeoPoint, network_centroid, project_arrays
from .gp import (
    GpSpec,
    default_phi,
    diagnostics,
    gibbs_fit,
    load_posterior,
    residual_summary,
    save_posterior,
)
from .ingest import (
    load_handoff_table,
    load_meteo,
    load_monitors,
    load_roads,
    load_towers,
    locf_fill,
    write_handoffs,
    write_meteo,
    write_monitors,
    write_roads,
    write_towers,
    MeteoSeries,
)
from .kriging import load_field, predict, validate, write_field
from .mobility import (
    build_trajectories,
    load_store,
    nearest_tower_distances_m,
    night_profiles,
    save_store,
)
from .exposure import (
    ExposureMatrix,
    bias_report,
    daily_summary,
    extreme_cohorts,
    hourly_bias_stats,
    hourly_exposure,
    static_exposure,
)
from .synth import gen_field, gen_population, scenario_from_config, scenario_dict
from .timebase import HOUR

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    pass


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 22), b""):
            h.update(block)
    return h.hexdigest()


def _require(path: str, produced_by: str) -> str:
    if not os.path.exists(path):
        raise StageError(f"missing input {path}; run the '{produced_by}' stage first")
    return path


def _write_meta(cfg: RunConfig, stage: str, inputs: list[str], outputs: list[str]) -> None:
    meta = {
        "stage": stage,
        "package_version": __version__,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "config": cfg.raw,
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs},
        "outputs": sorted(os.path.basename(p) for p in outputs),
    }
    path = os.path.join(cfg.stage_dir(stage), "meta.json")
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _monitor_points(series) -> list[GeoPoint]:
    return [s.location for s in series]


def _validation_ids(cfg: RunConfig) -> list[str]:
    configured = cfg.section("fit")["validation_sites"]
    if configured is not None:
        return list(configured)
    manifest_path = os.path.join(os.path.dirname(cfg.path("monitors")), "manifest.json")
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            return list(json.load(fh).get("validation_site_ids", []))
    return []


def _filled_meteo(meteo: list[MeteoSeries]) -> list[MeteoSeries]:
    return [
        MeteoSeries(m.station_id, m.location, locf_fill(m.temp_c), locf_fill(m.wind_ms))
        for m in meteo
    ]


# --- synth -------------------------------------------------------------------


def run_synth(cfg: RunConfig) -> None:
    out = cfg.stage_dir("synth")
    os.makedirs(out, exist_ok=True)
    scenario = scenario_from_config(cfg.section("synth"))
    field = gen_field(scenario, cfg.field_start_utc, cfg.field_hours, cfg.window, cfg.seed)
    outputs = []

    def opath(name: str) -> str:
        p = os.path.join(out, name)
        outputs.append(p)
        return p

    write_monitors(opath("monitors.csv"), field.monitors)
    write_meteo(opath("meteo.csv"), field.meteo)
    write_towers(opath("towers.csv"), field.towers)
    write_roads(opath("roads.csv"), field.roads)
    if field.truth_field is not None:
        write_field(opath("truth_field.csv"), field.truth_field)

    manifest: dict = {
        "scenario": scenario_dict(scenario),
        "true_params": {
            "beta": list(scenario.beta),
            "sigma2_eps": scenario.sigma2_eps,
            "sigma2_eta": scenario.sigma2_eta,
            "phi": field.phi,
        },
        "projection_origin": {"lat": field.origin.lat, "lon": field.origin.lon},
        "monitor_roles": field.monitor_roles,
        "validation_site_ids": [
            sid for sid, role in field.monitor_roles.items() if role == "validate"
        ],
        "n_observations_clamped": field.n_clamped,
    }
    if scenario.n_devices > 0:
        population = gen_population(scenario, field.towers, cfg.window, cfg.seed, field.origin)
        write_handoffs(
            opath("handoffs.csv"),
            population.handoff_device,
            population.handoff_ts,
            population.handoff_tower,
        )
        with open(opath("manifest_devices.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["device_id", "archetype", "night_tower_id", "work_tower_id", "commute_km", "n_handoffs"]
            )
            for m in population.manifest:
                w.writerow(
                    [m.device_id, m.archetype, m.night_tower_id, m.work_tower_id,
                     repr(m.commute_km), m.n_handoffs]
                )
        manifest["archetype_counts"] = {
            a: int((population.archetypes == a).sum())
            for a in sorted(set(population.archetypes))
        }
        manifest["n_handoffs"] = int(len(population.handoff_ts))
        manifest["devices_file"] = "manifest_devices.csv"
    _write_json(opath("manifest.json"), manifest)
    _write_meta(cfg, "synth", [], outputs)


# --- fit ---------------------------------------------------------------------


def _load_training_inputs(cfg: RunConfig):
    monitors = load_monitors(_require(cfg.path("monitors"), "synth"))
    meteo = _filled_meteo(load_meteo(_require(cfg.path("meteo"), "synth")))
    roads = load_roads(_require(cfg.path("roads"), "synth"))
    if not monitors:
        raise StageError("no monitor series found")
    origin = network_centroid(_monitor_points(monitors))
    val_ids = set(_validation_ids(cfg))
    train = [m for m in monitors if m.site_id not in val_ids]
    held_out = [m for m in monitors if m.site_id in val_ids]
    if not train:
        raise StageError("all monitor sites are marked as validation sites")
    return monitors, train, held_out, meteo, roads, origin


def run_fit(cfg: RunConfig) -> None:
    out = cfg.stage_dir("fit")
    os.makedirs(out, exist_ok=True)
    _, train, _, meteo, roads, origin = _load_training_inputs(cfg)
    fit_cfg = cfg.section("fit")
    points = _monitor_points(train)
    coords = project_arrays(
        origin, np.array([p.lat for p in points]), np.array([p.lon for p in points])
    )
    Z = np.stack([locf_fill(m.values) for m in train])
    t_len = Z.shape[1]
    if t_len != cfg.field_hours:
        raise StageError(
            f"monitor series span {t_len} hours but config expects {cfg.field_hours}"
        )
    X = build_design(points, meteo, roads, t_len, origin)
    phi = fit_cfg["phi"] if fit_cfg["phi"] is not None else default_phi(coords)
    spec = GpSpec(
        coords_km=coords,
        phi=phi,
        beta_prior_var=fit_cfg["beta_prior_var"],
        ig_shape=fit_cfg["ig_shape"],
        ig_scale=fit_cfg["ig_scale"],
        burn_in=fit_cfg["burn_in"],
        keep=fit_cfg["keep"],
        thin_latent=fit_cfg["thin_latent"],
    )
    posterior = gibbs_fit(spec, Z, X, cfg.seed)
    posterior.meta["train_site_ids"] = [m.site_id for m in train]
    posterior.meta["projection_origin"] = {"lat": origin.lat, "lon": origin.lon}
    save_posterior(
        os.path.join(out, "posterior.csv"), posterior, os.path.join(out, "latent")
    )
    diag = {
        "chains": diagnostics(posterior) if spec.keep >= 100 else {},
        "residuals": residual_summary(posterior, Z, X),
        "phi": phi,
    }
    _write_json(os.path.join(out, "diagnostics.json"), diag)
    _write_meta(
        cfg,
        "fit",
        [cfg.path("monitors"), cfg.path("meteo"), cfg.path("roads")],
        [
            os.path.join(out, "posterior.csv"),
            os.path.join(out, "latent_y.npy"),
            os.path.join(out, "latent_iters.npy"),
            os.path.join(out, "diagnostics.json"),
        ],
    )


def _load_fit(cfg: RunConfig):
    post_path = _require(os.path.join(cfg.stage_dir("fit"), "posterior.csv"), "fit")
    latent_prefix = os.path.join(cfg.stage_dir("fit"), "latent")
    _require(latent_prefix + "_y.npy", "fit")
    return load_posterior(post_path, latent_prefix), post_path


# --- validate ------------------------------------------------------------------


def run_validate(cfg: RunConfig) -> None:
    out = cfg.stage_dir("validate")
    os.makedirs(out, exist_ok=True)
    posterior, post_path = _load_fit(cfg)
    monitors, train, held_out, meteo, roads, origin = _load_training_inputs(cfg)
    if not held_out:
        raise StageError("no validation sites configured (fit.validation_sites)")
    t_len = cfg.field_hours
    train_points = _monitor_points(train)
    X_train = build_design(train_points, meteo, roads, t_len, origin)
    val_points = _monitor_points(held_out)
    X_val = build_design(val_points, meteo, roads, t_len, origin)
    val_coords = project_arrays(
        origin, np.array([p.lat for p in val_points]), np.array([p.lon for p in val_points])
    )
    fld = predict(
        posterior,
        X_train,
        val_coords,
        X_val,
        [m.site_id for m in held_out],
    )
    report = validate(fld, held_out)
    _write_json(
        os.path.join(out, "validation.json"),
        {
            "rmse_ppb": report.rmse,
            "rbias": report.rbias,
            "rmsep": report.rmsep,
            "n": report.n,
            "sites": [m.site_id for m in held_out],
        },
    )
    with open(os.path.join(out, "validation_sites.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "hour_index", "observed_ppb", "predicted_ppb"])
        for sid, arrs in report.per_site.items():
            for h, obs, pred in zip(arrs["hour_index"], arrs["observed"], arrs["predicted"]):
                w.writerow([sid, int(h), repr(float(obs)), repr(float(pred))])
    _write_meta(
        cfg,
        "validate",
        [post_path, cfg.path("monitors"), cfg.path("meteo"), cfg.path("roads")],
        [os.path.join(out, "validation.json"), os.path.join(out, "validation_sites.csv")],
    )


# --- predict -------------------------------------------------------------------


def run_predict(cfg: RunConfig) -> None:
    out = cfg.stage_dir("predict")
    os.makedirs(out, exist_ok=True)
    posterior, post_path = _load_fit(cfg)
    _, train, _, meteo, roads, origin = _load_training_inputs(cfg)
    towers = load_towers(_require(cfg.path("towers"), "synth"))
    if not towers:
        raise StageError("towers.csv is empty; nothing to predict at")
    pred_cfg = cfg.section("predict")
    hour_start = pred_cfg["hour_start"]
    hour_count = pred_cfg["hour_count"]
    if hour_start is None:
        hour_start = cfg.window_field_offset
    if hour_count is None:
        hour_count = cfg.window.n_hours
    t_len = cfg.field_hours
    train_points = _monitor_points(train)
    X_train = build_design(train_points, meteo, roads, t_len, origin)
    tower_points = [t.location for t in towers]
    X_tow = build_design(tower_points, meteo, roads, t_len, origin)
    tower_coords = project_arrays(
        origin,
        np.array([p.lat for p in tower_points]),
        np.array([p.lon for p in tower_points]),
    )
    fld = predict(
        posterior,
        X_train,
        tower_coords,
        X_tow,
        [t.tower_id for t in towers],
        hour_start=hour_start,
        hour_count=hour_count,
    )
    write_field(os.path.join(out, "field.csv"), fld)
    _write_meta(
        cfg,
        "predict",
        [post_path, cfg.path("towers"), cfg.path("meteo"), cfg.path("roads")],
        [os.path.join(out, "field.csv")],
    )


# --- mobility ------------------------------------------------------------------


def run_mobility(cfg: RunConfig) -> None:
    out = cfg.stage_dir("mobility")
    os.makedirs(out, exist_ok=True)
    towers = load_towers(_require(cfg.path("towers"), "synth"))
    table = load_handoff_table(_require(cfg.path("handoffs"), "synth"), towers)
    store = build_trajectories(table, cfg.window)
    del table
    save_store(os.path.join(out, "trajectories"), store)

    distances = nearest_tower_distances_m(towers)
    with open(os.path.join(out, "distances.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tower_id", "nearest_tower_m"])
        for t, d in zip(towers, distances):
            w.writerow([t.tower_id, repr(float(d))])

    counts = store.handoff_counts
    log_counts = np.log10(counts.astype(float))
    edges = np.linspace(0.0, max(float(log_counts.max()), 0.5), 41)
    hist, _ = np.histogram(log_counts, bins=edges)
    with open(os.path.join(out, "handoff_hist.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["log10_handoffs_lo", "log10_handoffs_hi", "devices"])
        for i, c in enumerate(hist):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])

    night_code, night_secs = night_profiles(store)
    tower_ids = [t.tower_id for t in towers]
    with open(os.path.join(out, "night_profiles.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["device_id", "night_tower_id", "night_seconds"])
        for i in range(store.n_devices):
            code = night_code[i]
            w.writerow(
                [
                    str(store.device_ids[i]),
                    tower_ids[code] if code >= 0 else "",
                    int(night_secs[i]),
                ]
            )
    stats = {
        "n_devices": int(store.n_devices),
        "n_segments": int(store.n_segments),
        "n_devices_dropped_outside_window": int(store.n_dropped_devices),
        "nearest_tower_distance_quartiles_m": [
            float(q) for q in np.quantile(distances, [0.25, 0.5, 0.75])
        ],
        "devices_with_single_handoff": int((counts == 1).sum()),
        "devices_without_night_dwell": int((night_code < 0).sum()),
    }
    _write_json(os.path.join(out, "stats.json"), stats)
    _write_meta(
        cfg,
        "mobility",
        [cfg.path("towers"), cfg.path("handoffs")],
        [
            os.path.join(out, "distances.csv"),
            os.path.join(out, "handoff_hist.csv"),
            os.path.join(out, "night_profiles.csv"),
            os.path.join(out, "stats.json"),
        ],
    )


# --- expose -------------------------------------------------------------------


def _field_path(cfg: RunConfig) -> str:
    configured = cfg.section("exposure")["field"]
    if configured:
        return configured
    return os.path.join(cfg.stage_dir("predict"), "field.csv")


def _load_mobility(cfg: RunConfig):
    towers = load_towers(_require(cfg.path("towers"), "synth"))
    store_dir = os.path.join(cfg.stage_dir("mobility"), "trajectories")
    _require(os.path.join(store_dir, "seg_ptr.npy"), "mobility")
    return towers, load_store(store_dir, towers, cfg.window)


def run_expose(cfg: RunConfig) -> None:
    out = cfg.stage_dir("expose")
    os.makedirs(out, exist_ok=True)
    exp_cfg = cfg.section("exposure")
    field_path = _require(_field_path(cfg), "predict")
    fld = load_field(field_path)
    towers, store = _load_mobility(cfg)
    night_code, _ = night_profiles(store)
    dynamic = hourly_exposure(
        store, fld, cfg.window, cfg.field_start_utc, device_block=exp_cfg["device_block"]
    )
    static = static_exposure(store, night_code, fld, cfg.window, cfg.field_start_utc)
    summary = daily_summary(dynamic, static, cfg.window, exp_cfg["min_window_hours"])

    outputs = []

    def opath(name: str) -> str:
        p = os.path.join(out, name)
        outputs.append(p)
        return p

    _write_daily_csv(opath("daily.csv"), summary)
    _write_bias_csv(opath("bias.csv"), summary)
    stats_rows = hourly_bias_stats(dynamic, static)
    pd.DataFrame(stats_rows).to_csv(opath("hourly_bias_stats.csv"), index=False)
    rep_cfg = cfg.section("report")
    report_inputs = bias_report(
        summary,
        dynamic,
        static,
        hist_range=(rep_cfg["hist_min"], rep_cfg["hist_max"]),
        hist_bin_width=rep_cfg["hist_bin_width"],
    )
    report_inputs["excluded_static_devices"] = sorted(static.excluded)
    _write_json(opath("report_inputs.json"), report_inputs)
    if exp_cfg["write_hourly"]:
        _write_hourly_csv(opath("exposure.csv"), dynamic, static, cfg)
    _write_meta(cfg, "expose", [field_path, cfg.path("towers")], outputs)


def _write_daily_csv(path: str, summary) -> None:
    frames = []
    for scenario, max8, cum in (
        ("dynamic", summary.max8_dynamic, summary.cum24_dynamic),
        ("static", summary.max8_static, summary.cum24_static),
    ):
        d_count, n_days = max8.shape
        frames.append(
            pd.DataFrame(
                {
                    "device_id": np.repeat(summary.device_ids, n_days),
                    "date": np.tile(summary.dates, d_count),
                    "scenario": scenario,
                    "max8_ppb": max8.ravel(),
                    "cum24_ppbh": cum.ravel(),
                }
            )
        )
    pd.concat(frames).to_csv(path, index=False)


def _write_bias_csv(path: str, summary) -> None:
    bias = summary.bias8
    d_count, n_days = bias.shape
    df = pd.DataFrame(
        {
            "device_id": np.repeat(summary.device_ids, n_days),
            "date": np.tile(summary.dates, d_count),
            "bias8_ppb": bias.ravel(),
        }
    )
    df = df[np.isfinite(df["bias8_ppb"])]
    df.to_csv(path, index=False)


def _write_hourly_csv(path: str, dynamic: ExposureMatrix, static: ExposureMatrix, cfg: RunConfig) -> None:
    h_count = dynamic.values.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write("device_id,scenario,hour_index,ppb,coverage\n")
        for mat in (dynamic, static):
            d_count = len(mat.device_ids)
            block = max(1, 2_000_000 // h_count)
            for lo in range(0, d_count, block):
                hi = min(lo + block, d_count)
                rows = pd.DataFrame(
                    {
                        "device_id": np.repeat(mat.device_ids[lo:hi], h_count),
                        "scenario": mat.scenario,
                        "hour_index": np.tile(np.arange(h_count), hi - lo),
                        "ppb": mat.values[lo:hi].ravel().astype(np.float64),
                        "coverage": mat.coverage[lo:hi].ravel().astype(np.float64),
                    }
                )
                rows.to_csv(fh, index=False, header=False)


# --- report -------------------------------------------------------------------


def run_report(cfg: RunConfig) -> None:
    from . import report as report_mod

    report_mod.run(cfg)


# --- covariates export -----------------------------------------------------------


def run_covariates_export(cfg: RunConfig) -> None:
    out = cfg.stage_dir("covariates")
    os.makedirs(out, exist_ok=True)
    monitors, _, _, meteo, roads, origin = _load_training_inputs(cfg)
    points = _monitor_points(monitors)
    design = build_design(points, meteo, roads, cfg.field_hours, origin)
    path = os.path.join(out, "design.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "hour_index"] + DESIGN_COLUMNS)
        for i, m in enumerate(monitors):
            for t in range(design.shape[0]):
                w.writerow([m.site_id, t] + [repr(float(v)) for v in design[t, i]])
    _write_meta(
        cfg,
        "covariates",
        [cfg.path("monitors"), cfg.path("meteo"), cfg.path("roads")],
        [path],
    )


STAGES = {
    "synth": run_synth,
    "fit": run_fit,
    "validate": run_validate,
    "predict": run_predict,
    "mobility": run_mobility,
    "expose": run_expose,
    "report": run_report,
}
