"""Regression design matrices and exploratory spatial diagnostics.

The hourly design matrix carries five columns per site:
    [1, temp_c, wind_ms, dist_primary_m, dist_secondary_m]
Meteorology is copied from each site's nearest station; road distances are
time-invariant and computed once per site.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

from .geo import GeoPoint, network_centroid, nearest, points_to_polylines_m
from .ingest import MeteoSeries, Road

DESIGN_COLUMNS = ["intercept", "temp_c", "wind_ms", "dist_primary_m", "dist_secondary_m"]


class CovariateError(ValueError):
    pass


@dataclass
class SemivariogramEstimate:
    """Matheron semivariogram, pooled over hours.

    `pair_counts[k]` is the number of (site pair, hour) contributions in bin
    k; empty bins carry count 0 and NaN semivariance.
    """

    bin_edges: np.ndarray
    semivariance: np.ndarray
    pair_counts: np.ndarray

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


def nearest_station_indices(
    sites: list[GeoPoint], stations: list[GeoPoint]
) -> np.ndarray:
    if not stations:
        raise CovariateError("no meteorological stations supplied")
    return np.array([nearest(s, stations) for s in sites], dtype=np.int64)


def road_distances_m(
    sites: list[GeoPoint],
    roads: list[Road],
    road_class: str,
    origin: GeoPoint | None = None,
) -> np.ndarray:
    """Per-site minimum distance (m) to any road of the given class."""
    lines = [r.vertices for r in roads if r.road_class == road_class]
    if not lines:
        raise CovariateError(f"no roads of class {road_class!r} in dataset")
    origin = origin or network_centroid(sites)
    lat = np.array([s.lat for s in sites])
    lon = np.array([s.lon for s in sites])
    return points_to_polylines_m(lat, lon, lines, origin)


def build_design(
    sites: list[GeoPoint],
    meteo: list[MeteoSeries],
    roads: list[Road],
    n_hours: int | None = None,
    origin: GeoPoint | None = None,
) -> np.ndarray:
    """Assemble the (T, n_sites, 5) design array.

    Meteo series must be gap-free (run locf_fill first); a NaN anywhere is a
    contract violation, not a fillable condition.
    """
    if not sites:
        raise CovariateError("no sites supplied")
    for m in meteo:
        if np.isnan(m.temp_c).any() or np.isnan(m.wind_ms).any():
            raise CovariateError(
                f"meteo station {m.station_id} contains gaps; LOCF-fill before building designs"
            )
    station_points = [m.location for m in meteo]
    station_idx = nearest_station_indices(sites, station_points)
    temp = np.stack([meteo[i].temp_c for i in station_idx])  # (n, T)
    wind = np.stack([meteo[i].wind_ms for i in station_idx])
    t_avail = temp.shape[1]
    t_len = t_avail if n_hours is None else n_hours
    if t_len > t_avail:
        raise CovariateError(f"requested {t_len} hours but meteo covers {t_avail}")
    d_primary = road_distances_m(sites, roads, "primary", origin)
    d_secondary = road_distances_m(sites, roads, "secondary", origin)
    n = len(sites)
    design = np.empty((t_len, n, 5))
    design[:, :, 0] = 1.0
    design[:, :, 1] = temp[:, :t_len].T
    design[:, :, 2] = wind[:, :t_len].T
    design[:, :, 3] = d_primary[None, :]
    design[:, :, 4] = d_secondary[None, :]
    return design


def empirical_semivariogram(
    values: np.ndarray,
    coords_km: np.ndarray,
    bins: int | np.ndarray = 10,
) -> SemivariogramEstimate:
    """Classical (Matheron) semivariogram of an (n_sites, T) panel.

    Half the average squared difference over all site pairs falling in each
    distance bin, pooled across hours. Integer `bins` requests that many
    equal-width bins spanning [0, d_max]. Pairs with a missing value at an
    hour are skipped for that hour.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    coords = np.asarray(coords_km, dtype=float)
    n = coords.shape[0]
    if n < 2:
        raise CovariateError("need at least 2 sites for a semivariogram")
    iu, ju = np.triu_indices(n, k=1)
    d = np.hypot(*(coords[iu] - coords[ju]).T)
    if isinstance(bins, (int, np.integer)):
        edges = np.linspace(0.0, float(d.max()), int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    which = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, len(edges) - 2)
    diff = values[iu] - values[ju]  # (n_pairs, T)
    present = ~np.isnan(diff)
    sq = np.where(present, diff, 0.0) ** 2
    k = len(edges) - 1
    counts = np.bincount(which, weights=present.sum(axis=1), minlength=k).astype(np.int64)
    sums = np.bincount(which, weights=sq.sum(axis=1), minlength=k)
    gamma = np.full(k, np.nan)
    nz = counts > 0
    gamma[nz] = sums[nz] / (2.0 * counts[nz])
    return SemivariogramEstimate(edges, gamma, counts)


def fit_exponential_semivariogram(
    est: SemivariogramEstimate,
) -> dict[str, float]:
    """Least-squares fit of nugget + sill*(1 - exp(-phi*d)) to the estimate.

    Exploratory diagnostic only; the pollution model never consumes these
    values. Bins with no pairs are ignored.
    """
    ok = est.pair_counts > 0
    d = est.bin_centers[ok]
    g = est.semivariance[ok]
    if ok.sum() < 3:
        raise CovariateError("too few nonempty bins to fit")

    def model(x, nugget, sill, phi):
        return nugget + sill * (1.0 - np.exp(-phi * x))

    sill0 = max(float(g.max()), 1e-12)
    phi0 = 3.0 / max(float(d.max()), 1e-12)
    (nugget, sill, phi), _ = curve_fit(
        model,
        d,
        g,
        p0=(0.0, sill0, phi0),
        bounds=([0.0, 0.0, 0.0], [np.inf, np.inf, np.inf]),
        maxfev=10_000,
    )
    return {"nugget": float(nugget), "sill": float(sill), "phi_per_km": float(phi)}
