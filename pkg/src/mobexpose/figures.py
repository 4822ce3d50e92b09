"""Matplotlib renderers for the report stage.

Every figure is drawn from the same delimited tables the report emits, so
the PNGs are a convenience view over the data, never the only record. The
Agg backend is forced and nothing time-dependent is drawn, keeping the
files byte-stable across reruns.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update(
    {
        "figure.figsize": (7.0, 4.2),
        "figure.dpi": 110,
        "savefig.dpi": 150,
        "font.size": 9,
        "axes.titlesize": 10,
        "axes.labelsize": 9,
        "legend.fontsize": 8,
        "axes.spines.top": False,
        "axes.spines.right": False,
    }
)

_QKEYS = ("0.01", "0.25", "0.5", "0.75", "0.99")


def _save(fig, path: str) -> str:
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def nearest_tower_distances(distances_m: np.ndarray, path: str) -> str:
    fig, ax = plt.subplots()
    pos = distances_m[distances_m > 0]
    bins = np.logspace(np.log10(max(pos.min(), 0.1)), np.log10(pos.max() + 1), 50)
    ax.hist(np.clip(distances_m, bins[0], None), bins=bins, color="#4878a8", edgecolor="white")
    ax.set_xscale("log")
    for q, style in zip(np.quantile(distances_m, [0.25, 0.5, 0.75]), (":", "--", ":")):
        ax.axvline(q, color="#333333", linestyle=style, linewidth=1)
    ax.set_xlabel("distance to nearest tower (m)")
    ax.set_ylabel("towers")
    ax.set_title("Nearest-tower distance distribution (quartiles marked)")
    return _save(fig, path)


def handoffs_per_device(edges_lo: np.ndarray, edges_hi: np.ndarray, counts: np.ndarray, path: str) -> str:
    fig, ax = plt.subplots()
    centers = 0.5 * (edges_lo + edges_hi)
    ax.bar(centers, counts, width=(edges_hi - edges_lo), color="#4878a8", edgecolor="white")
    ax.set_yscale("symlog")
    ax.set_xlabel("log10 hand-offs per device")
    ax.set_ylabel("devices (log scale)")
    ax.set_title("Hand-offs per device")
    return _save(fig, path)


def _quantile_fan(ax, x, qdicts: list[dict], color: str, label: str | None = None) -> None:
    q01 = [d["0.01"] for d in qdicts]
    q25 = [d["0.25"] for d in qdicts]
    q50 = [d["0.5"] for d in qdicts]
    q75 = [d["0.75"] for d in qdicts]
    q99 = [d["0.99"] for d in qdicts]
    ax.fill_between(x, q01, q99, alpha=0.15, color=color, linewidth=0)
    ax.fill_between(x, q25, q75, alpha=0.35, color=color, linewidth=0)
    ax.plot(x, q50, color=color, linewidth=1.5, label=label)


def bias_by_day(per_day: list[dict], path: str) -> str:
    fig, ax = plt.subplots()
    x = np.arange(len(per_day))
    _quantile_fan(ax, x, [d["quantiles"] for d in per_day], "#b04a4a")
    ax.axhline(0.0, color="#555555", linewidth=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels([d["date"][5:] for d in per_day])
    ax.set_xlabel("study day")
    ax.set_ylabel("dynamic - static 8-hr max (ppb)")
    ax.set_title("Daily 8-hr-max exposure assignment bias (1/25/50/75/99% bands)")
    return _save(fig, path)


def hourly_exposure_fans(rows: list[dict], scenario: str, path: str) -> str:
    fig, axes = plt.subplots(1, 2, figsize=(9.5, 4.0), sharey=True)
    colors = {"weekday": "#4878a8", "weekend": "#52a06e"}
    for ax, segment in zip(axes, ("weekday", "weekend")):
        sel = [r for r in rows if r["scenario"] == scenario and r["segment"] == segment]
        sel.sort(key=lambda r: r["hour_of_day"])
        if not sel:
            continue
        _quantile_fan(ax, [r["hour_of_day"] for r in sel], [r["quantiles"] for r in sel], colors[segment])
        ax.set_title(segment)
        ax.set_xlabel("hour of day")
    axes[0].set_ylabel("hourly exposure (ppb)")
    fig.suptitle(f"Hourly exposure distribution by hour of day ({scenario} scenario)")
    return _save(fig, path)


def max8_by_day(rows: list[dict], path: str) -> str:
    fig, ax = plt.subplots()
    dates = sorted({r["date"] for r in rows})
    x = np.arange(len(dates))
    colors = {"dynamic": "#4878a8", "static": "#b04a4a"}
    for scenario in ("dynamic", "static"):
        sel = {r["date"]: r for r in rows if r["scenario"] == scenario}
        qd = [sel[d]["quantiles"] for d in dates]
        shift = -0.12 if scenario == "dynamic" else 0.12
        _quantile_fan(ax, x + shift, qd, colors[scenario], label=scenario)
    ax.set_xticks(x)
    ax.set_xticklabels([d[5:] for d in dates])
    ax.legend()
    ax.set_xlabel("study day")
    ax.set_ylabel("daily 8-hr max (ppb)")
    ax.set_title("Daily 8-hr-max exposure by scenario")
    return _save(fig, path)


def cum24_diff_hists(per_day: list[dict], edges: np.ndarray, path: str) -> str:
    n = len(per_day)
    fig, axes = plt.subplots((n + 3) // 4, 4, figsize=(11, 2.2 * ((n + 3) // 4)), sharex=True)
    axes = np.atleast_1d(axes).ravel()
    centers = 0.5 * (edges[:-1] + edges[1:])
    for ax, day in zip(axes, per_day):
        ax.bar(centers, day["hist_counts"], width=(edges[1] - edges[0]), color="#52a06e")
        ax.set_yscale("symlog")
        ax.set_title(day["date"][5:], fontsize=8)
    for ax in axes[n:]:
        ax.set_visible(False)
    fig.suptitle("Average hourly difference, dynamic - static (24-hr cumulative basis, ppb/h)")
    return _save(fig, path)


def cumulative_by_hour(rows: list[dict], scenario: str, path: str) -> str:
    fig, axes = plt.subplots(1, 2, figsize=(9.5, 4.0), sharey=True)
    colors = {"weekday": "#4878a8", "weekend": "#52a06e"}
    for ax, segment in zip(axes, ("weekday", "weekend")):
        sel = [r for r in rows if r["scenario"] == scenario and r["segment"] == segment]
        sel.sort(key=lambda r: r["hour_of_day"])
        if not sel:
            continue
        _quantile_fan(ax, [r["hour_of_day"] for r in sel], [r["quantiles"] for r in sel], colors[segment])
        ax.set_title(segment)
        ax.set_xlabel("hour of day")
    axes[0].set_ylabel("cumulative exposure (ppb*h)")
    fig.suptitle(f"Cumulative exposure through the day ({scenario} scenario)")
    return _save(fig, path)


def daily_cumulative(rows: list[dict], path: str) -> str:
    fig, ax = plt.subplots()
    labels = []
    for i, row in enumerate(rows):
        q = row["quantiles"]
        ax.vlines(i, q["0.01"], q["0.99"], color="#888888", linewidth=1)
        ax.vlines(i, q["0.25"], q["0.75"], color="#4878a8", linewidth=6, alpha=0.7)
        ax.plot(i, q["0.5"], "o", color="#20324a", markersize=4)
        labels.append(f'{row["scenario"]}\n{row["segment"]}')
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels)
    ax.set_ylabel("end-of-day cumulative exposure (ppb*h)")
    ax.set_title("Daily cumulative exposure distribution")
    return _save(fig, path)


def validation_series(per_site: dict, path: str) -> str:
    n = len(per_site)
    fig, axes = plt.subplots(n, 1, figsize=(9, 2.6 * n), sharex=True)
    axes = np.atleast_1d(axes)
    for ax, (sid, arrs) in zip(axes, sorted(per_site.items())):
        ax.plot(arrs["hour_index"], arrs["observed"], color="#222222", linewidth=0.8, label="observed")
        ax.plot(arrs["hour_index"], arrs["predicted"], color="#b04a4a", linewidth=0.8, linestyle="--", label="predicted")
        ax.set_title(sid, fontsize=8)
        ax.set_ylabel("ppb")
    axes[-1].set_xlabel("hour index")
    axes[0].legend(loc="upper right")
    fig.suptitle("Observed vs predicted at validation sites")
    return _save(fig, path)
