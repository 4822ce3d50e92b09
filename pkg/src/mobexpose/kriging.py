"""Posterior-predictive concentration fields and validation metrics.

Conditioning a new site on the fitted hourly latent field is a plain
conditional normal: with c the exponential correlations to the n training
sites and w = S^-1 c,

    eta(s0, t) | eta_t, theta ~ N(w' eta_t, sigma2_eta * (1 - c' w))
    Z(s0, t) = x0' beta + eta(s0, t) + N(0, sigma2_eps)

The reported per-cell mean and SD are the exact mixture moments over the
stored posterior samples (law of total variance), so prediction adds no
Monte Carlo noise of its own and is fully deterministic given a posterior.
A sampled cube of Z draws is available behind a flag for diagnostics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .gp import GpModelError, GpPosterior, exp_correlation
from .ingest import MonitorSeries


class PredictionError(ValueError):
    pass


@dataclass
class HourlyField:
    """Dense (site x hour) concentration summary.

    `hour_offset` maps columns onto the fit clock: column j is fit hour
    hour_offset + j.
    """

    site_ids: list[str]
    hour_offset: int
    mean: np.ndarray  # (m, H) ppb
    sd: np.ndarray  # (m, H) ppb
    provenance: str = "posterior_predictive"

    def __post_init__(self) -> None:
        if self.mean.shape != self.sd.shape:
            raise PredictionError("mean/sd shape mismatch")
        if len(self.site_ids) != self.mean.shape[0]:
            raise PredictionError("site_ids do not match field rows")

    @property
    def n_hours(self) -> int:
        return self.mean.shape[1]


@dataclass
class ValidationReport:
    rmse: float
    rbias: float
    rmsep: float
    n: int
    per_site: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def scalars(self) -> dict[str, float]:
        return {"rmse": self.rmse, "rbias": self.rbias, "rmsep": self.rmsep, "n": self.n}


def _cross_correlation(
    train_coords: np.ndarray, new_coords: np.ndarray, phi: float
) -> np.ndarray:
    diff = train_coords[:, None, :] - new_coords[None, :, :]
    return np.exp(-phi * np.sqrt((diff**2).sum(axis=2)))


def predict(
    posterior: GpPosterior,
    train_X: np.ndarray,
    new_coords_km: np.ndarray,
    new_X: np.ndarray,
    site_ids: list[str],
    hour_start: int = 0,
    hour_count: int | None = None,
    return_draws: bool = False,
    rng: np.random.Generator | None = None,
) -> HourlyField | tuple[HourlyField, np.ndarray]:
    """Predict Z at new sites for a contiguous block of fit hours.

    train_X is the (T, n, p) design the posterior was fitted with; it backs
    the latent samples out into spatial effects (eta = Y - X beta). new_X is
    (H_total, m, p) on the same hour clock; the block
    [hour_start, hour_start + hour_count) is predicted. Sites are processed
    against all stored latent samples simultaneously, so memory stays at
    O(m * n_samples) per hour and the m x m covariance never materializes.
    """
    if posterior.latent_y.size == 0:
        raise PredictionError("posterior carries no latent field samples")
    new_coords = np.atleast_2d(np.asarray(new_coords_km, dtype=float))
    train_X = np.asarray(train_X, dtype=float)
    new_X = np.asarray(new_X, dtype=float)
    m = len(new_coords)
    if len(site_ids) != m:
        raise PredictionError("site_ids do not match new_coords_km")
    n_sites, t_fit = posterior.latent_y.shape[1:]
    if train_X.shape[:2] != (t_fit, n_sites):
        raise PredictionError("train_X does not match the posterior's latent dimensions")
    if hour_count is None:
        hour_count = new_X.shape[0] - hour_start
    if hour_start < 0 or hour_start + hour_count > t_fit:
        raise PredictionError(
            f"requested hours [{hour_start}, {hour_start + hour_count}) outside fit range "
            f"[0, {t_fit})"
        )
    if new_X.shape[1] != m:
        raise PredictionError("new_X site dimension does not match new_coords_km")

    S = exp_correlation(posterior.coords_km, posterior.phi)
    try:
        cho = sla.cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - S validated at fit time
        raise GpModelError("spatial correlation matrix is not positive definite") from exc
    C = _cross_correlation(posterior.coords_km, new_coords, posterior.phi)  # (n, m)
    W = sla.cho_solve(cho, C)  # (n, m)
    cond_factor = np.clip(1.0 - np.einsum("nm,nm->m", C, W), 0.0, None)  # (m,)

    lat_iters = posterior.latent_iters
    beta_lat = posterior.beta[lat_iters]  # (K, p)
    s2e_lat = posterior.sigma2_eps[lat_iters]
    s2h_lat = posterior.sigma2_eta[lat_iters]
    k_lat = len(lat_iters)
    mean_noise_var = cond_factor * s2h_lat.mean() + s2e_lat.mean()  # (m,)

    mean = np.empty((m, hour_count))
    sd = np.empty((m, hour_count))
    draws = np.empty((m, hour_count, k_lat)) if return_draws else None
    if return_draws and rng is None:
        rng = np.random.default_rng(0)
    for j in range(hour_count):
        t = hour_start + j
        eta_t = posterior.latent_y[:, :, t] - beta_lat @ train_X[t].T  # (K, n)
        cond_mean = eta_t @ W + beta_lat @ new_X[t].T  # (K, m)
        mean[:, j] = cond_mean.mean(axis=0)
        var = cond_mean.var(axis=0, ddof=1) if k_lat > 1 else np.zeros(m)
        sd[:, j] = np.sqrt(var + mean_noise_var)
        if return_draws:
            noise_sd = np.sqrt(np.outer(s2h_lat, cond_factor) + s2e_lat[:, None])  # (K, m)
            draws[:, j, :] = (cond_mean + noise_sd * rng.standard_normal((k_lat, m))).T
        if not np.isfinite(mean[:, j]).all():
            raise PredictionError(f"non-finite prediction at fit hour {t}")

    fld = HourlyField(list(site_ids), hour_start, mean, sd)
    return (fld, draws) if return_draws else fld


def validate(
    fld: HourlyField,
    held_out: list[MonitorSeries],
) -> ValidationReport:
    """RMSE / relative bias / relative mean separation over held-out sites.

    rmse  = sqrt(mean (zhat - z)^2)
    rbias = sum(zhat - z) / (N * zbar)
    rmsep = sum (zhat - z)^2 / sum (zbar - z)^2      (zbar: held-out mean)
    """
    row_of = {sid: i for i, sid in enumerate(fld.site_ids)}
    errs: list[np.ndarray] = []
    obs_all: list[np.ndarray] = []
    per_site: dict[str, dict[str, np.ndarray]] = {}
    for series in held_out:
        if series.site_id not in row_of:
            raise PredictionError(f"field has no predictions for site {series.site_id}")
        row = row_of[series.site_id]
        hours = np.arange(fld.n_hours) + fld.hour_offset
        if hours[-1] >= len(series.values):
            raise PredictionError(
                f"site {series.site_id} observed series too short for field hours"
            )
        obs = series.values[hours]
        pred = fld.mean[row]
        ok = ~np.isnan(obs)
        errs.append(pred[ok] - obs[ok])
        obs_all.append(obs[ok])
        per_site[series.site_id] = {"hour_index": hours[ok], "observed": obs[ok], "predicted": pred[ok]}
    err = np.concatenate(errs) if errs else np.empty(0)
    if err.size == 0:
        raise PredictionError("no overlapping observations to validate against")
    obs = np.concatenate(obs_all)
    zbar = float(obs.mean())
    denom = float(((zbar - obs) ** 2).sum())
    rmse = float(np.sqrt((err**2).mean()))
    rbias = float(err.sum() / (err.size * zbar)) if zbar != 0 else float("nan")
    rmsep = float((err**2).sum() / denom) if denom > 0 else float("nan")
    return ValidationReport(rmse, rbias, rmsep, int(err.size), per_site)


def write_field(path: str, fld: HourlyField) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tower_id", "hour_index", "pred_mean_ppb", "pred_sd_ppb"])
        for i, sid in enumerate(fld.site_ids):
            for j in range(fld.n_hours):
                w.writerow(
                    [sid, fld.hour_offset + j, repr(float(fld.mean[i, j])), repr(float(fld.sd[i, j]))]
                )


def load_field(path: str, provenance: str = "posterior_predictive") -> HourlyField:
    """Read a field CSV; rows must cover a dense (site x hour) grid."""
    import pandas as pd

    df = pd.read_csv(path, dtype={"tower_id": str})
    expected = ["tower_id", "hour_index", "pred_mean_ppb", "pred_sd_ppb"]
    if list(df.columns) != expected:
        raise PredictionError(f"{path}: unexpected header {list(df.columns)!r}")
    site_ids = list(pd.unique(df["tower_id"]))
    hour_lo = int(df["hour_index"].min())
    hour_hi = int(df["hour_index"].max())
    h = hour_hi - hour_lo + 1
    m = len(site_ids)
    if len(df) != m * h:
        raise PredictionError(f"{path}: not a dense site x hour grid")
    row_idx = pd.Index(site_ids).get_indexer(df["tower_id"])
    col_idx = df["hour_index"].to_numpy() - hour_lo
    mean = np.full((m, h), np.nan)
    sd = np.full((m, h), np.nan)
    mean[row_idx, col_idx] = df["pred_mean_ppb"].to_numpy()
    sd[row_idx, col_idx] = df["pred_sd_ppb"].to_numpy()
    if np.isnan(mean).any():
        raise PredictionError(f"{path}: duplicate or missing (site, hour) cells")
    return HourlyField(site_ids, hour_lo, mean, sd, provenance)
