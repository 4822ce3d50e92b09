"""Hierarchical spatio-temporal Gaussian process fit by Gibbs sampling.

Model, for hour t = 0..T-1 over n fixed sites:

    Z_t = Y_t + eps_t,          eps_t ~ N(0, sigma2_eps * I)
    Y_t = X_t beta + eta_t,     eta_t ~ N(0, sigma2_eta * S)

with S[i, j] = exp(-phi * d_ij) on plane distances in km and phi held fixed
(default 3 / d_max over the site network). Priors: beta ~ N(mean, v0 * I)
with a huge v0 (flat), and independent Inverse-Gamma(a, b) on both variance
components. All four full conditionals are conjugate, so the sampler runs a
plain systematic-scan Gibbs cycle:

    (i)   Y_t | .  ~ N with precision (1/s2e) I + (1/s2h) S^-1, per hour
    (ii)  beta | . ~ N combining the prior with sum_t X_t' (s2h S)^-1 X_t
    (iii) s2e | .  ~ IG(a + nT/2, b + 0.5 sum_t ||Z_t - Y_t||^2)
    (iv)  s2h | .  ~ IG(a + nT/2, b + 0.5 sum_t r_t' S^-1 r_t),  r = Y - X beta

The centered cycle alone random-walks along the nugget/sill ridge (the two
variances are only weakly separated by a sparse network), so each iteration
ends with a collapsed rejuvenation move: an adaptive Metropolis step on
(log s2e, log s2h) targeting the variance posterior with Y and beta
integrated out analytically, followed by exact conjugate redraws of beta
and Y. Every kernel leaves the posterior invariant, and the marginal
evaluations cost O(n p^2) thanks to a one-time eigendecomposition of S.
Proposal adaptation stops at the end of burn-in.

S is factored once (phi fixed) and reused everywhere. The generator is
numpy's seeded PCG64; given a seed the fit is bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import stats as sstats


class GpModelError(ValueError):
    pass


def pairwise_distances_km(coords_km: np.ndarray) -> np.ndarray:
    c = np.asarray(coords_km, dtype=float)
    diff = c[:, None, :] - c[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


def default_phi(coords_km: np.ndarray) -> float:
    """Spatial decay fixed at 3 / d_max over the site network (1/km)."""
    c = np.asarray(coords_km, dtype=float)
    if len(c) < 2:
        raise GpModelError("need at least 2 sites to set a default phi")
    d_max = pairwise_distances_km(c).max()
    if d_max <= 0.0:
        raise GpModelError("all sites coincide; maximum pairwise distance is 0")
    return 3.0 / d_max


def exp_correlation(coords_km: np.ndarray, phi: float) -> np.ndarray:
    """Exponential correlation matrix exp(-phi * d_ij); unit diagonal."""
    if phi <= 0.0:
        raise GpModelError(f"phi must be positive, got {phi}")
    return np.exp(-phi * pairwise_distances_km(coords_km))


@dataclass
class GpSpec:
    """Everything the sampler needs besides data: geometry, priors, schedule."""

    coords_km: np.ndarray  # (n, 2) projected site coordinates
    phi: float  # 1/km
    beta_prior_mean: np.ndarray | None = None  # default zeros
    beta_prior_var: float = 1e10
    ig_shape: float = 2.0
    ig_scale: float = 1.0
    burn_in: int = 1000
    keep: int = 4000
    thin_latent: int = 5
    # Fixing a variance removes its Gibbs step (used by oracle checks).
    sigma2_eps_fixed: float | None = None
    sigma2_eta_fixed: float | None = None
    # Collapsed (marginal) variance rejuvenation; disable to run the bare
    # conjugate cycle only.
    collapsed_variance_move: bool = True

    def __post_init__(self) -> None:
        self.coords_km = np.asarray(self.coords_km, dtype=float)
        if self.phi <= 0.0:
            raise GpModelError("phi must be positive")
        if self.ig_shape <= 0.0 or self.ig_scale <= 0.0:
            raise GpModelError("inverse-gamma hyperparameters must be positive")
        if self.burn_in < 1 or self.keep < 1:
            raise GpModelError("burn_in and keep must both be >= 1")
        if self.thin_latent < 1:
            raise GpModelError("thin_latent must be >= 1")


@dataclass
class GpPosterior:
    """Kept Gibbs samples plus the thinned latent-field subsample."""

    beta: np.ndarray  # (keep, p)
    sigma2_eps: np.ndarray  # (keep,)
    sigma2_eta: np.ndarray  # (keep,)
    latent_y: np.ndarray  # (n_latent, n_sites, T)
    latent_iters: np.ndarray  # (n_latent,) indices into kept samples
    phi: float
    coords_km: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n_kept(self) -> int:
        return len(self.sigma2_eps)


def _chol(matrix: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise GpModelError(f"{what} is not positive definite") from exc


def gibbs_fit(
    spec: GpSpec,
    Z: np.ndarray,
    X: np.ndarray,
    seed: int,
) -> GpPosterior:
    """Run the Gibbs cycle and return kept samples.

    Z is (n_sites, T) with no missing values; X is (T, n_sites, p). The
    latent field is stored for every `thin_latent`-th kept iteration.
    """
    Z = np.asarray(Z, dtype=float)
    X = np.asarray(X, dtype=float)
    n, T = Z.shape
    if X.shape[:2] != (T, n):
        raise GpModelError(f"design shape {X.shape} does not match data ({n} sites, {T} hours)")
    if np.isnan(Z).any():
        raise GpModelError("Z contains missing values; fill before fitting")
    p = X.shape[2]
    if len(spec.coords_km) != n:
        raise GpModelError("spec.coords_km does not match the number of sites")

    S = exp_correlation(spec.coords_km, spec.phi)
    L_S = _chol(S, "spatial correlation matrix")
    S_inv = sla.cho_solve((L_S, True), np.eye(n))

    prior_mean = (
        np.zeros(p) if spec.beta_prior_mean is None else np.asarray(spec.beta_prior_mean, float)
    )
    prior_prec = 1.0 / spec.beta_prior_var

    # Constant pieces: sum_t X_t' S^-1 X_t and the per-hour mean projections.
    XtSiX = np.einsum("tnp,nm,tmq->pq", X, S_inv, X, optimize=True)

    # Eigenbasis of S: Sigma = s2e I + s2h S diagonalizes to s2e + s2h*lam,
    # making the (Y, beta)-marginalized likelihood of (s2e, s2h) O(n p^2).
    eigvals, Q = np.linalg.eigh(S)
    Z_rot = Q.T @ Z  # (n, T)
    X_rot = np.einsum("ni,tnp->tip", Q, X, optimize=True)
    szz = (Z_rot**2).sum(axis=1)  # (n,)
    xtx_site = np.einsum("tip,tiq->ipq", X_rot, X_rot, optimize=True)  # (n, p, p)
    xtz_site = np.einsum("tip,it->ip", X_rot, Z_rot, optimize=True)  # (n, p)

    def marginal_logpost(s2e_v: float, s2h_v: float) -> tuple[float, np.ndarray, np.ndarray]:
        """log p(s2e, s2h | Z) up to a constant, plus (P, r) for the beta draw."""
        d = s2e_v + s2h_v * eigvals
        dinv = 1.0 / d
        P = prior_prec * np.eye(p) + (xtx_site * dinv[:, None, None]).sum(axis=0)
        r = prior_prec * prior_mean + (xtz_site * dinv[:, None]).sum(axis=0)
        quad_z = float(szz @ dinv)
        sign, logdet_p = np.linalg.slogdet(P)
        sol = np.linalg.solve(P, r)
        loglik = -0.5 * (T * float(np.log(d).sum()) + quad_z - float(r @ sol) + logdet_p)
        logprior = (
            -(spec.ig_shape + 1.0) * np.log(s2e_v)
            - spec.ig_scale / s2e_v
            - (spec.ig_shape + 1.0) * np.log(s2h_v)
            - spec.ig_scale / s2h_v
        )
        return loglik + logprior, P, r

    rng = np.random.default_rng(seed)

    # Deterministic initialization: pooled least squares, residual split.
    XtX = np.einsum("tnp,tnq->pq", X, X, optimize=True)
    XtZ = np.einsum("tnp,nt->p", X, Z, optimize=True)
    beta = np.linalg.solve(XtX + 1e-9 * np.eye(p), XtZ)
    resid0 = Z - np.einsum("tnp,p->nt", X, beta, optimize=True)
    var0 = max(float(resid0.var()), 1e-3)
    s2e = spec.sigma2_eps_fixed if spec.sigma2_eps_fixed is not None else var0 / 2.0
    s2h = spec.sigma2_eta_fixed if spec.sigma2_eta_fixed is not None else var0 / 2.0
    Y = Z.copy()

    n_latent = (spec.keep + spec.thin_latent - 1) // spec.thin_latent
    out_beta = np.empty((spec.keep, p))
    out_s2e = np.empty(spec.keep)
    out_s2h = np.empty(spec.keep)
    out_latent = np.empty((n_latent, n, T))
    out_latent_iters = np.empty(n_latent, dtype=np.int64)

    ig_shape_post = spec.ig_shape + n * T / 2.0
    total = spec.burn_in + spec.keep
    eye_n = np.eye(n)

    def draw_latent(beta_v: np.ndarray, s2e_v: float, s2h_v: float) -> np.ndarray:
        Xb = np.einsum("tnp,p->nt", X, beta_v, optimize=True)
        prec = eye_n / s2e_v + S_inv / s2h_v
        L_prec = _chol(prec, "latent-field precision")
        rhs = Z / s2e_v + (S_inv @ Xb) / s2h_v
        mean_y = sla.cho_solve((L_prec, True), rhs)
        noise = sla.solve_triangular(L_prec.T, rng.standard_normal((n, T)), lower=False)
        return mean_y + noise

    # Adaptive proposal state for the collapsed move (log-variance space).
    do_collapsed = (
        spec.collapsed_variance_move
        and spec.sigma2_eps_fixed is None
        and spec.sigma2_eta_fixed is None
    )
    if do_collapsed:
        log_u = np.log([s2e, s2h])
        logpost_u, P_u, r_u = marginal_logpost(s2e, s2h)
        prop_chol = np.diag([0.3, 0.05])
        adapt_mean = log_u.copy()
        adapt_cov = np.diag([0.09, 0.0025])
        adapt_n = 1

    for it in range(total):
        # (i) latent field, all hours at once (shared precision)
        Y = draw_latent(beta, s2e, s2h)

        # (ii) regression coefficients
        SiY = S_inv @ Y
        prec_b = prior_prec * np.eye(p) + XtSiX / s2h
        rhs_b = prior_prec * prior_mean + np.einsum("tnp,nt->p", X, SiY, optimize=True) / s2h
        L_b = _chol(prec_b, "beta precision")
        mean_b = sla.cho_solve((L_b, True), rhs_b)
        beta = mean_b + sla.solve_triangular(L_b.T, rng.standard_normal(p), lower=False)

        # (iii) nugget variance
        if spec.sigma2_eps_fixed is None:
            sse = float(((Z - Y) ** 2).sum())
            s2e = (spec.ig_scale + sse / 2.0) / rng.gamma(ig_shape_post)

        # (iv) sill variance
        if spec.sigma2_eta_fixed is None:
            R = Y - np.einsum("tnp,p->nt", X, beta, optimize=True)
            quad = float((R * (S_inv @ R)).sum())
            s2h = (spec.ig_scale + quad / 2.0) / rng.gamma(ig_shape_post)

        # (v) collapsed rejuvenation: Metropolis on the (Y, beta)-marginal
        # variance posterior, then exact conjugate redraws of beta and Y.
        if do_collapsed:
            log_u = np.log([s2e, s2h])
            logpost_u, P_u, r_u = marginal_logpost(s2e, s2h)
            proposal = log_u + prop_chol @ rng.standard_normal(2)
            cand = np.exp(proposal)
            logpost_c, P_c, r_c = marginal_logpost(cand[0], cand[1])
            # Jacobian of the log transform: + sum(log u)
            log_ratio = (logpost_c + proposal.sum()) - (logpost_u + log_u.sum())
            if np.log(rng.random()) < log_ratio:
                s2e, s2h = float(cand[0]), float(cand[1])
                log_u, logpost_u, P_u, r_u = proposal, logpost_c, P_c, r_c
            if it < spec.burn_in:
                # Haario-style running covariance; frozen after burn-in
                adapt_n += 1
                delta = log_u - adapt_mean
                adapt_mean = adapt_mean + delta / adapt_n
                adapt_cov = adapt_cov + (np.outer(delta, log_u - adapt_mean) - adapt_cov) / adapt_n
                if adapt_n > 20:
                    prop_chol = np.linalg.cholesky(
                        (2.38**2 / 2.0) * adapt_cov + 1e-9 * np.eye(2)
                    )
            # exact draws of beta | s2, Z and Y | beta, s2, Z
            L_pu = _chol(P_u, "marginal beta precision")
            mean_bu = sla.cho_solve((L_pu, True), r_u)
            beta = mean_bu + sla.solve_triangular(L_pu.T, rng.standard_normal(p), lower=False)
            Y = draw_latent(beta, s2e, s2h)

        if it >= spec.burn_in:
            k = it - spec.burn_in
            if not (np.isfinite(beta).all() and np.isfinite(s2e) and np.isfinite(s2h)):
                raise GpModelError(f"divergent (non-finite) sample at kept iteration {k}")
            out_beta[k] = beta
            out_s2e[k] = s2e
            out_s2h[k] = s2h
            if k % spec.thin_latent == 0:
                slot = k // spec.thin_latent
                out_latent[slot] = Y
                out_latent_iters[slot] = k

    return GpPosterior(
        beta=out_beta,
        sigma2_eps=out_s2e,
        sigma2_eta=out_s2h,
        latent_y=out_latent,
        latent_iters=out_latent_iters,
        phi=spec.phi,
        coords_km=spec.coords_km,
        seed=seed,
        meta={
            "burn_in": spec.burn_in,
            "keep": spec.keep,
            "thin_latent": spec.thin_latent,
            "ig_shape": spec.ig_shape,
            "ig_scale": spec.ig_scale,
            "beta_prior_var": spec.beta_prior_var,
            "sigma2_eps_fixed": spec.sigma2_eps_fixed,
            "sigma2_eta_fixed": spec.sigma2_eta_fixed,
        },
    )


def autocorrelation(chain: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags 0..max_lag (rho_0 = 1)."""
    x = np.asarray(chain, dtype=float)
    x = x - x.mean()
    denom = float((x * x).sum())
    if denom == 0.0:
        out = np.full(max_lag + 1, np.nan)
        out[0] = 1.0
        return out
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for k in range(1, max_lag + 1):
        out[k] = float((x[:-k] * x[k:]).sum()) / denom
    return out


def effective_sample_size(chain: np.ndarray) -> float:
    """ESS via the initial-positive-sequence truncation of the ACF sum.

    Pairs rho_(2m) + rho_(2m+1) are accumulated while positive; tau =
    -1 + 2 * sum of the positive pairs; ESS = N / max(tau, 1/N).
    Degenerate (zero-variance) chains return NaN.
    """
    x = np.asarray(chain, dtype=float)
    n = len(x)
    if n < 4 or float(np.var(x)) == 0.0:
        return float("nan")
    rho = autocorrelation(x, min(n - 2, 2000))
    tau = -1.0
    for m in range(0, (len(rho) - 1) // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
    tau = max(tau, 1.0 / n)
    return n / tau


def diagnostics(posterior: GpPosterior, max_lag: int = 50) -> dict:
    """Per-parameter chain diagnostics: ACF, split-chain check, ESS."""
    if posterior.n_kept < 100:
        raise GpModelError("diagnostics need at least 100 kept samples")
    chains: dict[str, np.ndarray] = {
        f"beta{i}": posterior.beta[:, i] for i in range(posterior.beta.shape[1])
    }
    chains["sigma2_eps"] = posterior.sigma2_eps
    chains["sigma2_eta"] = posterior.sigma2_eta
    out: dict[str, dict] = {}
    for name, chain in chains.items():
        half = len(chain) // 2
        a, b = chain[:half], chain[half : 2 * half]
        var = float(np.var(chain, ddof=1))
        degenerate = var == 0.0
        pooled_sd = float(np.sqrt((np.var(a, ddof=1) + np.var(b, ddof=1)) / 2.0))
        out[name] = {
            "mean": float(chain.mean()),
            "sd": float(np.sqrt(var)),
            "acf": [float(v) for v in autocorrelation(chain, max_lag)[1:]],
            "ess": float(effective_sample_size(chain)),
            "split_mean_diff_sds": (
                float(abs(a.mean() - b.mean()) / pooled_sd) if pooled_sd > 0 else float("nan")
            ),
            "split_var_ratio": (
                float(np.var(a, ddof=1) / np.var(b, ddof=1))
                if np.var(b, ddof=1) > 0
                else float("nan")
            ),
            "degenerate": bool(degenerate),
        }
    return out


def residual_summary(posterior: GpPosterior, Z: np.ndarray, X: np.ndarray) -> dict:
    """Normality summaries at both residual levels.

    data level:   Z - posterior-mean latent field
    latent level: posterior-mean latent field - X * posterior-mean beta
    """
    y_bar = posterior.latent_y.mean(axis=0)
    beta_bar = posterior.beta.mean(axis=0)
    fitted = np.einsum("tnp,p->nt", np.asarray(X, float), beta_bar, optimize=True)
    out = {}
    for name, resid in (("data_level", Z - y_bar), ("latent_level", y_bar - fitted)):
        flat = np.asarray(resid, float).ravel()
        out[name] = {
            "mean": float(flat.mean()),
            "sd": float(flat.std(ddof=1)),
            "skewness": float(sstats.skew(flat)),
            "excess_kurtosis": float(sstats.kurtosis(flat)),
        }
    return out


def save_posterior(csv_path: str, posterior: GpPosterior, latent_prefix: str | None = None) -> None:
    """Persist kept samples as CSV with a commented JSON metadata header.

    The latent subsample goes to sidecar .npy files (a dense cube, not a
    table); plain .npy is used because it is byte-deterministic.
    """
    meta = {
        "seed": posterior.seed,
        "phi": posterior.phi,
        "coords_km": np.asarray(posterior.coords_km).tolist(),
        **posterior.meta,
    }
    p = posterior.beta.shape[1]
    cols = ["iter"] + [f"beta{i}" for i in range(p)] + ["sigma2_eps", "sigma2_eta"]
    with open(csv_path, "w", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        fh.write(",".join(cols) + "\n")
        for k in range(posterior.n_kept):
            row = (
                [str(k)]
                + [repr(float(v)) for v in posterior.beta[k]]
                + [repr(float(posterior.sigma2_eps[k])), repr(float(posterior.sigma2_eta[k]))]
            )
            fh.write(",".join(row) + "\n")
    if latent_prefix is not None:
        np.save(latent_prefix + "_y.npy", posterior.latent_y)
        np.save(latent_prefix + "_iters.npy", posterior.latent_iters)


def load_posterior(csv_path: str, latent_prefix: str | None = None) -> GpPosterior:
    with open(csv_path) as fh:
        header = fh.readline()
        if not header.startswith("# "):
            raise GpModelError(f"{csv_path}: missing metadata header")
        meta = json.loads(header[2:])
        names = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    p = sum(1 for c in names if c.startswith("beta"))
    beta = data[:, 1 : 1 + p]
    s2e = data[:, 1 + p]
    s2h = data[:, 2 + p]
    if latent_prefix is not None:
        latent_y = np.load(latent_prefix + "_y.npy")
        latent_iters = np.load(latent_prefix + "_iters.npy")
    else:
        latent_y = np.empty((0, 0, 0))
        latent_iters = np.empty(0, dtype=np.int64)
    known = {
        "seed",
        "phi",
        "coords_km",
    }
    return GpPosterior(
        beta=beta,
        sigma2_eps=s2e,
        sigma2_eta=s2h,
        latent_y=latent_y,
        latent_iters=latent_iters,
        phi=float(meta["phi"]),
        coords_km=np.asarray(meta["coords_km"], dtype=float),
        seed=int(meta["seed"]),
        meta={k: v for k, v in meta.items() if k not in known},
    )
