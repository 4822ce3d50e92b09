"""Hourly, daily 8-hr-max, and cumulative exposure under dynamic and static
scenarios, plus the dynamic-minus-static assignment bias and cohort extracts.

Dynamic hourly exposure is the dwell-duration-weighted average of the field
values of the towers visited during that hour. It is accumulated relative to
the hour's first tower value (v_ref + sum w*(v - v_ref) / sum w), which is
algebraically the weighted mean but returns the field value *exactly* when
the whole hour is spent under a single tower - so a device that never moves
has bias identically zero, not zero up to rounding.

The big join explodes dwell segments into per-hour pieces in device blocks;
everything downstream of the CSV parse is vectorized.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date as _date

import numpy as np

from .kriging import HourlyField
from .mobility import TrajectoryStore
from .timebase import HOUR, StudyWindow


class ExposureError(ValueError):
    pass


DEFAULT_QUANTILES = (0.0, 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99, 1.0)


@dataclass
class ExposureSeries:
    """Single-device hourly exposure under one scenario."""

    device_id: str
    scenario: str  # dynamic | static
    values: np.ndarray  # (H,) ppb, NaN where no coverage
    coverage: np.ndarray  # (H,) fraction of the hour with assigned dwell


@dataclass
class ExposureMatrix:
    """Hourly exposure for every device under one scenario.

    values/coverage are (D, H); excluded maps device_id -> reason for
    devices the scenario cannot cover (e.g. no night tower).
    """

    scenario: str
    device_ids: np.ndarray
    values: np.ndarray
    coverage: np.ndarray
    excluded: dict[str, str]

    def series(self, index: int) -> ExposureSeries:
        return ExposureSeries(
            str(self.device_ids[index]),
            self.scenario,
            self.values[index],
            self.coverage[index],
        )


def _field_alignment(
    store: TrajectoryStore, field: HourlyField, window: StudyWindow, field_start_utc: int
) -> tuple[np.ndarray, int]:
    """Map store towers onto field rows and window hour 0 onto a field column."""
    row_of = {sid: i for i, sid in enumerate(field.site_ids)}
    tower_rows = np.empty(len(store.towers), dtype=np.int64)
    missing = []
    for i, t in enumerate(store.towers):
        r = row_of.get(t.tower_id)
        if r is None:
            missing.append(t.tower_id)
            tower_rows[i] = -1
        else:
            tower_rows[i] = r
    used = np.zeros(len(store.towers), dtype=bool)
    if store.n_segments:
        used[np.unique(store.seg_tower)] = True
    bad = [store.towers[i].tower_id for i in np.flatnonzero(used & (tower_rows < 0))]
    if bad:
        shown = ", ".join(sorted(bad)[:20])
        raise ExposureError(f"towers missing from the field: {shown}"
                            + ("" if len(bad) <= 20 else f" (+{len(bad) - 20} more)"))
    if (window.start - field_start_utc) % HOUR != 0:
        raise ExposureError("study window is not aligned to the field hour grid")
    col0 = (window.start - field_start_utc) // HOUR - field.hour_offset
    if col0 < 0 or col0 + window.n_hours > field.n_hours:
        raise ExposureError(
            f"field hours [{field.hour_offset}, {field.hour_offset + field.n_hours}) do not cover "
            f"the study window"
        )
    return tower_rows, int(col0)


def hourly_exposure(
    store: TrajectoryStore,
    field: HourlyField,
    window: StudyWindow,
    field_start_utc: int,
    device_block: int = 32768,
) -> ExposureMatrix:
    """Dynamic scenario: duration-weighted tower concentrations per hour."""
    tower_rows, col0 = _field_alignment(store, field, window, field_start_utc)
    h_count = window.n_hours
    d_count = store.n_devices
    fmean = np.ascontiguousarray(field.mean, dtype=np.float32)
    values = np.full((d_count, h_count), np.nan, dtype=np.float32)
    coverage = np.zeros((d_count, h_count), dtype=np.float32)

    for dev_lo in range(0, d_count, device_block):
        dev_hi = min(dev_lo + device_block, d_count)
        lo, hi = store.seg_ptr[dev_lo], store.seg_ptr[dev_hi]
        if hi == lo:
            continue
        start = store.seg_start[lo:hi]
        end = store.seg_end[lo:hi]
        tower = store.seg_tower[lo:hi]
        dev_local = np.repeat(
            np.arange(dev_hi - dev_lo, dtype=np.int64),
            np.diff(store.seg_ptr[dev_lo : dev_hi + 1]),
        )
        h0 = (start - window.start) // HOUR
        h1 = (end - 1 - window.start) // HOUR
        span = (h1 - h0 + 1).astype(np.int64)
        total = int(span.sum())
        seg_of_piece = np.repeat(np.arange(len(span)), span)
        offsets = np.concatenate([[0], np.cumsum(span)[:-1]])
        within = np.arange(total, dtype=np.int64) - offsets[seg_of_piece]
        piece_hour = h0[seg_of_piece] + within
        hb_start = window.start + piece_hour * HOUR
        overlap = np.minimum(end[seg_of_piece], hb_start + HOUR) - np.maximum(
            start[seg_of_piece], hb_start
        )
        piece_val = fmean[tower_rows[tower[seg_of_piece]], piece_hour + col0].astype(np.float64)
        keys = dev_local[seg_of_piece] * h_count + piece_hour
        # Keys are nondecreasing (segments are time-ordered per device), so
        # run starts mark each (device, hour) cell's first piece.
        run_start = np.empty(total, dtype=bool)
        run_start[0] = True
        run_start[1:] = keys[1:] != keys[:-1]
        first_idx = np.flatnonzero(run_start)
        run_len = np.diff(np.append(first_idx, total))
        v_ref = np.repeat(piece_val[first_idx], run_len)

        n_cells = (dev_hi - dev_lo) * h_count
        w_sum = np.bincount(keys, weights=overlap.astype(np.float64), minlength=n_cells)
        d_sum = np.bincount(
            keys, weights=overlap.astype(np.float64) * (piece_val - v_ref), minlength=n_cells
        )
        cell_ref = np.zeros(n_cells)
        cell_ref[keys[first_idx]] = piece_val[first_idx]
        covered = w_sum > 0
        vals = np.full(n_cells, np.nan)
        vals[covered] = cell_ref[covered] + d_sum[covered] / w_sum[covered]
        values[dev_lo:dev_hi] = vals.reshape(dev_hi - dev_lo, h_count).astype(np.float32)
        coverage[dev_lo:dev_hi] = (w_sum.reshape(dev_hi - dev_lo, h_count) / HOUR).astype(
            np.float32
        )
    return ExposureMatrix("dynamic", store.device_ids, values, coverage, {})


def static_exposure(
    store: TrajectoryStore,
    night_tower_code: np.ndarray,
    field: HourlyField,
    window: StudyWindow,
    field_start_utc: int,
) -> ExposureMatrix:
    """Static scenario: each device pinned to its night tower all week."""
    tower_rows, col0 = _field_alignment(store, field, window, field_start_utc)
    h_count = window.n_hours
    fmean = np.ascontiguousarray(field.mean, dtype=np.float32)
    values = np.full((store.n_devices, h_count), np.nan, dtype=np.float32)
    coverage = np.zeros((store.n_devices, h_count), dtype=np.float32)
    excluded: dict[str, str] = {}
    defined = night_tower_code >= 0
    rows = tower_rows[np.clip(night_tower_code, 0, None)]
    hours = np.arange(h_count) + col0
    values[defined] = fmean[rows[defined][:, None], hours[None, :]]
    coverage[defined] = 1.0
    for idx in np.flatnonzero(~defined):
        excluded[str(store.device_ids[idx])] = "no_night_dwell"
    return ExposureMatrix("static", store.device_ids, values, coverage, excluded)


def daily_max8_matrix(
    values: np.ndarray, n_days: int, min_hours: int = 6
) -> np.ndarray:
    """Average 8-hour maximum per device-day.

    24 candidate windows start at each hour of the day and may extend into
    the next; a window is valid with >= min_hours non-missing hours and its
    value is the mean of the present hours. Days with no valid window are
    NaN.
    """
    v = np.asarray(values, dtype=np.float64)
    d_count, h_count = v.shape
    if h_count < n_days * 24:
        raise ExposureError(f"{h_count} hours cannot cover {n_days} days")
    padded = np.concatenate([v, np.full((d_count, 7), np.nan)], axis=1)
    present = ~np.isnan(padded)
    filled = np.where(present, padded, 0.0)
    csum = np.concatenate([np.zeros((d_count, 1)), np.cumsum(filled, axis=1)], axis=1)
    ccnt = np.concatenate(
        [np.zeros((d_count, 1), dtype=np.int64), np.cumsum(present, axis=1)], axis=1
    )
    out = np.full((d_count, n_days), np.nan)
    for day in range(n_days):
        starts = day * 24 + np.arange(24)
        w_sum = csum[:, starts + 8] - csum[:, starts]  # (D, 24)
        w_cnt = ccnt[:, starts + 8] - ccnt[:, starts]
        valid = w_cnt >= min_hours
        w_mean = np.where(valid, w_sum / np.maximum(w_cnt, 1), -np.inf)
        best = w_mean.max(axis=1)
        out[:, day] = np.where(np.isfinite(best), best, np.nan)
    return out


def daily_max8(series: np.ndarray, day: int, min_hours: int = 6) -> float:
    """Single-series daily 8-hr max (NaN if no valid window)."""
    series = np.asarray(series, dtype=float)
    n_days = max(day + 1, series.size // 24)
    return float(daily_max8_matrix(series[None, :], n_days, min_hours)[0, day])


def daily_cumulative(values: np.ndarray, n_days: int) -> tuple[np.ndarray, np.ndarray]:
    """Per device-day cumulative exposure (ppb*h over present hours) and
    the count of present hours. All-missing days are NaN."""
    v = np.asarray(values, dtype=np.float64)
    d_count = v.shape[0]
    cum = np.empty((d_count, n_days))
    hours = np.empty((d_count, n_days), dtype=np.int64)
    for day in range(n_days):
        block = v[:, day * 24 : (day + 1) * 24]
        present = ~np.isnan(block)
        hours[:, day] = present.sum(axis=1)
        cum[:, day] = np.where(hours[:, day] > 0, np.nansum(block, axis=1), np.nan)
    return cum, hours


@dataclass
class DailySummary:
    """Per device-day metrics for both scenarios plus the assignment bias."""

    device_ids: np.ndarray  # (D,)
    dates: list[str]  # (n_days,) local ISO dates
    max8_dynamic: np.ndarray  # (D, n_days)
    max8_static: np.ndarray
    cum24_dynamic: np.ndarray
    cum24_static: np.ndarray

    @property
    def bias8(self) -> np.ndarray:
        return self.max8_dynamic - self.max8_static

    @property
    def cum24_hourly_diff(self) -> np.ndarray:
        return (self.cum24_dynamic - self.cum24_static) / 24.0

    def weekly_mean_bias(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.nanmean(self.bias8, axis=1)


def daily_summary(
    dynamic: ExposureMatrix,
    static: ExposureMatrix,
    window: StudyWindow,
    min_hours: int = 6,
) -> DailySummary:
    n_days = window.n_days
    return DailySummary(
        device_ids=dynamic.device_ids,
        dates=window.day_dates(),
        max8_dynamic=daily_max8_matrix(dynamic.values, n_days, min_hours),
        max8_static=daily_max8_matrix(static.values, n_days, min_hours),
        cum24_dynamic=daily_cumulative(dynamic.values, n_days)[0],
        cum24_static=daily_cumulative(static.values, n_days)[0],
    )


def weekday_mask(dates: list[str]) -> np.ndarray:
    return np.array([_date.fromisoformat(d).weekday() < 5 for d in dates])


def _quantile_row(x: np.ndarray, qs: tuple[float, ...]) -> list[float]:
    x = x[np.isfinite(x)]
    if x.size == 0:
        return [float("nan")] * len(qs)
    return [float(v) for v in np.quantile(x, qs)]


def bias_report(
    summary: DailySummary,
    dynamic: ExposureMatrix,
    static: ExposureMatrix,
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES,
    hist_range: tuple[float, float] = (-80.0, 80.0),
    hist_bin_width: float = 1.0,
) -> dict:
    """Distribution artifacts: per-day bias quantiles and histograms,
    per-device weekly aggregates, weekday/weekend hourly exposure quantiles,
    and daily cumulative distributions. Exact sort-based quantiles."""
    edges = np.arange(hist_range[0], hist_range[1] + hist_bin_width / 2, hist_bin_width)
    wk = weekday_mask(summary.dates)
    bias = summary.bias8
    per_day = []
    for d, day in enumerate(summary.dates):
        col = bias[:, d]
        finite = col[np.isfinite(col)]
        clipped = np.clip(finite, edges[0], edges[-1]) if finite.size else finite
        hist = np.histogram(clipped, bins=edges)[0] if finite.size else np.zeros(len(edges) - 1, int)
        per_day.append(
            {
                "date": day,
                "weekday": bool(wk[d]),
                "n_devices": int(finite.size),
                "quantiles": dict(zip(map(str, quantiles), _quantile_row(col, quantiles))),
                "hist_counts": [int(c) for c in hist],
            }
        )
    weekly = summary.weekly_mean_bias()
    hours_of_day = np.arange(dynamic.values.shape[1]) % 24
    day_of_hour = np.arange(dynamic.values.shape[1]) // 24
    hourly = {"dynamic": dynamic.values, "static": static.values}
    hourly_quantiles = []
    for scenario, mat in hourly.items():
        for segment, mask in (("weekday", wk), ("weekend", ~wk)):
            day_sel = np.flatnonzero(mask[day_of_hour])
            for hod in range(24):
                cols = day_sel[hours_of_day[day_sel] == hod]
                vals = mat[:, cols].ravel()
                hourly_quantiles.append(
                    {
                        "scenario": scenario,
                        "segment": segment,
                        "hour_of_day": hod,
                        "quantiles": dict(
                            zip(map(str, quantiles), _quantile_row(vals.astype(np.float64), quantiles))
                        ),
                    }
                )
    cum_daily = []
    for scenario, cum in (
        ("dynamic", summary.cum24_dynamic),
        ("static", summary.cum24_static),
    ):
        for segment, mask in (("weekday", wk), ("weekend", ~wk)):
            vals = cum[:, mask].ravel()
            cum_daily.append(
                {
                    "scenario": scenario,
                    "segment": segment,
                    "quantiles": dict(zip(map(str, quantiles), _quantile_row(vals, quantiles))),
                }
            )
    # running cumulative exposure by hour of day (device-days pooled)
    n_days = len(summary.dates)
    cum_by_hour = []
    for scenario, mat in hourly.items():
        blocks = mat.reshape(mat.shape[0], n_days, 24)
        running = np.cumsum(np.nan_to_num(blocks, nan=np.float32(0.0)), axis=2)
        any_present = ~np.isnan(blocks).all(axis=2)
        for segment, mask in (("weekday", wk), ("weekend", ~wk)):
            if not mask.any():
                continue
            sel = running[:, mask, :][any_present[:, mask]]
            for hod in range(24):
                cum_by_hour.append(
                    {
                        "scenario": scenario,
                        "segment": segment,
                        "hour_of_day": hod,
                        "quantiles": dict(
                            zip(map(str, quantiles), _quantile_row(sel[:, hod], quantiles))
                        ),
                    }
                )
    diff_cum = summary.cum24_hourly_diff
    per_day_cumdiff = []
    for d, day in enumerate(summary.dates):
        col = diff_cum[:, d]
        finite = col[np.isfinite(col)]
        clipped = np.clip(finite, edges[0], edges[-1]) if finite.size else finite
        hist = np.histogram(clipped, bins=edges)[0] if finite.size else np.zeros(len(edges) - 1, int)
        per_day_cumdiff.append(
            {
                "date": day,
                "n_devices": int(finite.size),
                "quantiles": dict(zip(map(str, quantiles), _quantile_row(col, quantiles))),
                "hist_counts": [int(c) for c in hist],
            }
        )
    return {
        "hist_edges": [float(e) for e in edges],
        "bias8_by_day": per_day,
        "cum24_hourly_diff_by_day": per_day_cumdiff,
        "hourly_exposure_quantiles": hourly_quantiles,
        "daily_cumulative_quantiles": cum_daily,
        "cumulative_by_hour_quantiles": cum_by_hour,
        "weekly_mean_bias_quantiles": dict(
            zip(map(str, quantiles), _quantile_row(weekly, quantiles))
        ),
    }


def hourly_bias_stats(
    dynamic: ExposureMatrix,
    static: ExposureMatrix,
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES,
) -> list[dict]:
    """Per-hour summary of the dynamic-minus-static difference.

    Cheap aggregate kept even when the hourly dump is disabled; the
    magnitude-envelope check reads min/max from here.
    """
    diff = dynamic.values.astype(np.float64) - static.values.astype(np.float64)
    out = []
    for h in range(diff.shape[1]):
        col = diff[:, h]
        finite = col[np.isfinite(col)]
        row = {
            "hour_index": h,
            "n_devices": int(finite.size),
            "min": float(finite.min()) if finite.size else float("nan"),
            "max": float(finite.max()) if finite.size else float("nan"),
        }
        row.update(dict(zip((f"q{q}" for q in quantiles), _quantile_row(col, quantiles))))
        out.append(row)
    return out


@dataclass
class CohortResult:
    top_devices: list[str]
    bottom_devices: list[str]
    # (tower_id, lat, lon, device_count, mean_bias8), count >= min_devices only
    top_towers: list[tuple[str, float, float, int, float]]
    bottom_towers: list[tuple[str, float, float, int, float]]


def cohorts_from_weekly_bias(
    device_ids: np.ndarray,
    weekly_bias: np.ndarray,
    night_tower_ids: np.ndarray,
    tower_locations: dict[str, tuple[float, float]],
    q: float,
    min_devices_per_tower: int = 5,
) -> CohortResult:
    """Rank devices by weekly mean bias and extract the top/bottom q cohorts.

    Devices with undefined bias (NaN) are excluded before ranking; ranking
    ties break on device_id, so the extraction is deterministic. Night-tower
    tables are aggregate-only: towers hosting fewer than
    `min_devices_per_tower` cohort members are withheld.
    """
    if not 0.0 < q < 0.5:
        raise ExposureError(f"cohort fraction must be in (0, 0.5), got {q}")
    device_ids = np.asarray(device_ids, dtype=object)
    weekly_bias = np.asarray(weekly_bias, dtype=float)
    night_tower_ids = np.asarray(night_tower_ids, dtype=object)
    valid = np.isfinite(weekly_bias)
    n_valid = int(valid.sum())
    k = int(np.floor(q * n_valid))
    if k < 1:
        raise ExposureError(f"population of {n_valid} devices is too small for q={q}")
    idx = np.flatnonzero(valid)
    order_top = idx[np.lexsort((device_ids[idx], -weekly_bias[idx]))][:k]
    order_bot = idx[np.lexsort((device_ids[idx], weekly_bias[idx]))][:k]

    def tower_table(members: np.ndarray) -> list[tuple[str, float, float, int, float]]:
        rows: dict[str, list[float]] = {}
        for dev in members:
            tid = night_tower_ids[dev]
            if tid is None or tid == "":
                continue
            rows.setdefault(str(tid), []).append(weekly_bias[dev])
        table = []
        for tid in sorted(rows):
            vals = rows[tid]
            if len(vals) < min_devices_per_tower:
                continue
            lat, lon = tower_locations[tid]
            table.append((tid, lat, lon, len(vals), float(np.mean(vals))))
        return table

    return CohortResult(
        top_devices=[str(device_ids[i]) for i in order_top],
        bottom_devices=[str(device_ids[i]) for i in order_bot],
        top_towers=tower_table(order_top),
        bottom_towers=tower_table(order_bot),
    )


def extreme_cohorts(
    summary: DailySummary,
    night_tower_code: np.ndarray,
    store: TrajectoryStore,
    q: float,
    min_devices_per_tower: int = 5,
) -> CohortResult:
    """Cohort extraction straight from in-memory exposure results."""
    tower_ids = np.array(
        [store.towers[c].tower_id if c >= 0 else "" for c in night_tower_code], dtype=object
    )
    locations = {t.tower_id: (t.location.lat, t.location.lon) for t in store.towers}
    return cohorts_from_weekly_bias(
        summary.device_ids,
        summary.weekly_mean_bias(),
        tower_ids,
        locations,
        q,
        min_devices_per_tower,
    )
