"""Report stage: tabular counterparts of the study figures plus rendered PNGs.

Reads the aggregates prepared by the expose stage (report_inputs.json), the
daily/bias tables, and the mobility statistics, and emits:

    report.json                      one summary document
    bias_quantiles_by_day.csv        daily bias distribution
    bias_hist_by_day.csv             fixed-bin histograms per day
    cum24_diff_quantiles_by_day.csv  hourly-average difference (cumulative basis)
    cum24_diff_hist_by_day.csv
    hourly_exposure_quantiles.csv    by hour of day, weekday/weekend, scenario
    cumulative_by_hour_quantiles.csv running cumulative exposure by hour
    daily_cum_quantiles.csv          end-of-day cumulative distribution
    max8_quantiles_by_day.csv        daily 8-hr max by scenario
    cohorts_top.csv / cohorts_bottom.csv   night-tower aggregates (>= k devices)
    figures/*.png                    rendered views of the same tables
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np
import pandas as pd

from .config import RunConfig
from .exposure import DEFAULT_QUANTILES, cohorts_from_weekly_bias
from .ingest import load_towers


def _require(path: str, produced_by: str) -> str:
    from .pipeline import StageError

    if not os.path.exists(path):
        raise StageError(f"missing input {path}; run the '{produced_by}' stage first")
    return path


def _qcols(quantiles=DEFAULT_QUANTILES) -> list[str]:
    return [f"q{q}" for q in quantiles]


def _quantile_csv(path: str, rows: list[dict], lead_cols: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        qkeys = list(rows[0]["quantiles"]) if rows else [str(q) for q in DEFAULT_QUANTILES]
        w.writerow(lead_cols + [f"q{k}" for k in qkeys])
        for r in rows:
            w.writerow(
                [r[c] for c in lead_cols] + [repr(float(r["quantiles"][k])) for k in qkeys]
            )


def _hist_csv(path: str, rows: list[dict], edges: list[float], label: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([label, "bin_lo", "bin_hi", "devices"])
        for r in rows:
            for i, c in enumerate(r["hist_counts"]):
                w.writerow([r["date"], repr(edges[i]), repr(edges[i + 1]), int(c)])


def run(cfg: RunConfig) -> None:
    from . import figures
    from .pipeline import _write_meta

    out = cfg.stage_dir("report")
    os.makedirs(out, exist_ok=True)
    rep_cfg = cfg.section("report")

    inputs_path = _require(os.path.join(cfg.stage_dir("expose"), "report_inputs.json"), "expose")
    bias_path = _require(os.path.join(cfg.stage_dir("expose"), "bias.csv"), "expose")
    daily_path = _require(os.path.join(cfg.stage_dir("expose"), "daily.csv"), "expose")
    distances_path = _require(os.path.join(cfg.stage_dir("mobility"), "distances.csv"), "mobility")
    handoff_hist_path = _require(os.path.join(cfg.stage_dir("mobility"), "handoff_hist.csv"), "mobility")
    night_path = _require(os.path.join(cfg.stage_dir("mobility"), "night_profiles.csv"), "mobility")
    towers_path = _require(cfg.path("towers"), "synth")

    with open(inputs_path) as fh:
        agg = json.load(fh)
    edges = agg["hist_edges"]
    outputs = []

    def opath(name: str) -> str:
        p = os.path.join(out, name)
        outputs.append(p)
        return p

    _quantile_csv(
        opath("bias_quantiles_by_day.csv"),
        [
            {"date": r["date"], "n_devices": r["n_devices"], "quantiles": r["quantiles"]}
            for r in agg["bias8_by_day"]
        ],
        ["date", "n_devices"],
    )
    _hist_csv(opath("bias_hist_by_day.csv"), agg["bias8_by_day"], edges, "date")
    _quantile_csv(
        opath("cum24_diff_quantiles_by_day.csv"),
        [
            {"date": r["date"], "n_devices": r["n_devices"], "quantiles": r["quantiles"]}
            for r in agg["cum24_hourly_diff_by_day"]
        ],
        ["date", "n_devices"],
    )
    _hist_csv(
        opath("cum24_diff_hist_by_day.csv"), agg["cum24_hourly_diff_by_day"], edges, "date"
    )
    _quantile_csv(
        opath("hourly_exposure_quantiles.csv"),
        agg["hourly_exposure_quantiles"],
        ["scenario", "segment", "hour_of_day"],
    )
    _quantile_csv(
        opath("cumulative_by_hour_quantiles.csv"),
        agg["cumulative_by_hour_quantiles"],
        ["scenario", "segment", "hour_of_day"],
    )
    _quantile_csv(
        opath("daily_cum_quantiles.csv"),
        agg["daily_cumulative_quantiles"],
        ["scenario", "segment"],
    )

    # daily 8-hr max distribution by scenario, from the daily table
    daily = pd.read_csv(daily_path, dtype={"device_id": str})
    max8_rows = []
    for (date, scenario), grp in daily.groupby(["date", "scenario"], sort=True):
        vals = grp["max8_ppb"].to_numpy()
        vals = vals[np.isfinite(vals)]
        max8_rows.append(
            {
                "date": date,
                "scenario": scenario,
                "n_devices": int(vals.size),
                "quantiles": {
                    str(q): (float(np.quantile(vals, q)) if vals.size else float("nan"))
                    for q in DEFAULT_QUANTILES
                },
            }
        )
    _quantile_csv(opath("max8_quantiles_by_day.csv"), max8_rows, ["date", "scenario", "n_devices"])

    # cohorts: weekly mean bias joined with night towers
    bias = pd.read_csv(bias_path, dtype={"device_id": str})
    weekly = bias.groupby("device_id", sort=True)["bias8_ppb"].mean()
    night = pd.read_csv(night_path, dtype={"device_id": str, "night_tower_id": str})
    night["night_tower_id"] = night["night_tower_id"].fillna("")
    night = night.set_index("device_id")["night_tower_id"]
    towers = load_towers(towers_path)
    locations = {t.tower_id: (t.location.lat, t.location.lon) for t in towers}
    device_ids = weekly.index.to_numpy(dtype=object)
    cohorts = cohorts_from_weekly_bias(
        device_ids,
        weekly.to_numpy(),
        night.reindex(weekly.index, fill_value="").to_numpy(dtype=object),
        locations,
        rep_cfg["cohort_fraction"],
        rep_cfg["min_devices_per_tower"],
    )
    for name, table in (("cohorts_top.csv", cohorts.top_towers), ("cohorts_bottom.csv", cohorts.bottom_towers)):
        with open(opath(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tower_id", "lat", "lon", "device_count", "mean_bias8"])
            for tid, lat, lon, count, mean in table:
                w.writerow([tid, repr(lat), repr(lon), count, repr(mean)])

    distances = pd.read_csv(distances_path)["nearest_tower_m"].to_numpy()
    hand = pd.read_csv(handoff_hist_path)

    report = {
        "bias8_by_day": [
            {k: r[k] for k in ("date", "weekday", "n_devices", "quantiles")}
            for r in agg["bias8_by_day"]
        ],
        "weekly_mean_bias_quantiles": agg["weekly_mean_bias_quantiles"],
        "nearest_tower_distance_quartiles_m": [
            float(q) for q in np.quantile(distances, [0.25, 0.5, 0.75])
        ],
        "cohort_fraction": rep_cfg["cohort_fraction"],
        "cohort_size": len(cohorts.top_devices),
        "cohort_top_towers": len(cohorts.top_towers),
        "cohort_bottom_towers": len(cohorts.bottom_towers),
        "excluded_static_devices": agg.get("excluded_static_devices", []),
    }
    with open(opath("report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if rep_cfg["figures"]:
        fig_dir = os.path.join(out, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        fp = lambda name: opath(os.path.join("figures", name))
        figures.nearest_tower_distances(distances, fp("tower_nearest_distance.png"))
        figures.handoffs_per_device(
            hand["log10_handoffs_lo"].to_numpy(),
            hand["log10_handoffs_hi"].to_numpy(),
            hand["devices"].to_numpy(),
            fp("handoffs_per_device.png"),
        )
        figures.bias_by_day(agg["bias8_by_day"], fp("bias8_by_day.png"))
        figures.hourly_exposure_fans(
            agg["hourly_exposure_quantiles"], "dynamic", fp("hourly_exposure_dynamic.png")
        )
        figures.hourly_exposure_fans(
            agg["hourly_exposure_quantiles"], "static", fp("hourly_exposure_static.png")
        )
        figures.max8_by_day(max8_rows, fp("max8_by_day.png"))
        figures.cum24_diff_hists(
            agg["cum24_hourly_diff_by_day"], np.asarray(edges), fp("cum24_diff_hist.png")
        )
        figures.cumulative_by_hour(
            agg["cumulative_by_hour_quantiles"], "dynamic", fp("cumulative_by_hour.png")
        )
        figures.daily_cumulative(agg["daily_cumulative_quantiles"], fp("daily_cumulative.png"))

    _write_meta(
        cfg,
        "report",
        [inputs_path, bias_path, daily_path, distances_path, handoff_hist_path, night_path, towers_path],
        outputs,
    )
