"""Gibbs sampler against conjugate analytic oracles, plus chain diagnostics."""

import numpy as np
import pytest

from mobexpose.gp import (
    GpModelError,
    GpSpec,
    autocorrelation,
    default_phi,
    diagnostics,
    effective_sample_size,
    exp_correlation,
    gibbs_fit,
    load_posterior,
    pairwise_distances_km,
    save_posterior,
)


class TestDefaultPhi:
    def test_two_sites_formula(self):
        coords = np.array([[0.0, 0.0], [3.0, 0.0]])
        assert default_phi(coords) == pytest.approx(1.0)

    def test_matches_max_pair_oracle(self):
        rng = np.random.default_rng(31)
        coords = rng.uniform(-80, 80, (30, 2))
        best = 0.0
        for i in range(30):
            for j in range(i + 1, 30):
                best = max(best, float(np.hypot(*(coords[i] - coords[j]))))
        assert default_phi(coords) == pytest.approx(3.0 / best)

    def test_coincident_sites_error(self):
        with pytest.raises(GpModelError):
            default_phi(np.zeros((4, 2)))


class TestCorrelation:
    def test_structure(self):
        rng = np.random.default_rng(32)
        coords = rng.uniform(0, 150, (12, 2))
        S = exp_correlation(coords, 0.0186)
        assert np.allclose(np.diag(S), 1.0)
        assert ((S > 0) & (S <= 1.0)).all()
        assert np.allclose(S, S.T)
        np.linalg.cholesky(S)  # positive definite
        d = pairwise_distances_km(coords)
        iu = np.triu_indices(12, 1)
        order = np.argsort(d[iu])
        assert (np.diff(S[iu][order]) <= 1e-12).all()


def analytic_beta_posterior(Z, X, S, s2e, s2h, prior_var, prior_mean=None):
    """Marginal normal posterior of beta with both variances known."""
    n, t_len = Z.shape
    p = X.shape[2]
    prior_mean = np.zeros(p) if prior_mean is None else prior_mean
    sigma = s2e * np.eye(n) + s2h * S
    sig_inv = np.linalg.inv(sigma)
    prec = np.eye(p) / prior_var
    rhs = prior_mean / prior_var
    for t in range(t_len):
        prec = prec + X[t].T @ sig_inv @ X[t]
        rhs = rhs + X[t].T @ sig_inv @ Z[:, t]
    cov = np.linalg.inv(prec)
    return cov @ rhs, cov


def _toy_problem(seed=5, n=2, t_len=3, p=2):
    rng = np.random.default_rng(seed)
    coords = np.array([[0.0, 0.0], [40.0, 10.0], [15.0, 55.0], [70.0, 30.0]])[:n]
    X = np.concatenate(
        [np.ones((t_len, n, 1)), rng.normal(0, 2, (t_len, n, p - 1))], axis=2
    )
    beta_true = np.array([8.0, 1.5])[:p]
    s2e, s2h = 2.0, 6.0
    S = exp_correlation(coords, 0.05)
    eta = np.linalg.cholesky(s2h * S) @ rng.standard_normal((n, t_len))
    Z = np.einsum("tnp,p->nt", X, beta_true) + eta + rng.normal(0, np.sqrt(s2e), (n, t_len))
    return coords, X, Z, S, s2e, s2h


class TestGibbsConjugateOracles:
    def test_beta_matches_analytic_posterior_with_fixed_variances(self):
        coords, X, Z, S, s2e, s2h = _toy_problem()
        spec = GpSpec(
            coords_km=coords,
            phi=0.05,
            burn_in=400,
            keep=4000,
            sigma2_eps_fixed=s2e,
            sigma2_eta_fixed=s2h,
        )
        post = gibbs_fit(spec, Z, X, seed=90)
        mean_oracle, cov_oracle = analytic_beta_posterior(Z, X, S, s2e, s2h, spec.beta_prior_var)
        for i in range(2):
            ess = effective_sample_size(post.beta[:, i])
            mcse = np.sqrt(cov_oracle[i, i] / ess)
            assert post.beta[:, i].mean() == pytest.approx(mean_oracle[i], abs=3 * mcse)
        cov_hat = np.cov(post.beta.T)
        ess_min = min(effective_sample_size(post.beta[:, i]) for i in range(2))
        for i in range(2):
            for j in range(2):
                se = np.sqrt(
                    (cov_oracle[i, i] * cov_oracle[j, j] + cov_oracle[i, j] ** 2) / ess_min
                )
                assert cov_hat[i, j] == pytest.approx(cov_oracle[i, j], abs=3 * se)

    def test_latent_mean_is_precision_weighted_average(self):
        # 1 site, constant design, beta pinned by a near-degenerate prior
        t_len = 6
        X = np.ones((t_len, 1, 1))
        beta_known = np.array([10.0])
        Z = np.array([[14.0, 6.0, 12.0, 9.0, 11.0, 8.0]])
        s2e, s2h = 3.0, 5.0
        spec = GpSpec(
            coords_km=np.zeros((1, 2)),
            phi=0.05,
            burn_in=200,
            keep=3000,
            thin_latent=1,
            beta_prior_mean=beta_known,
            beta_prior_var=1e-12,
            sigma2_eps_fixed=s2e,
            sigma2_eta_fixed=s2h,
        )
        post = gibbs_fit(spec, Z, X, seed=17)
        w = (1 / s2e) / (1 / s2e + 1 / s2h)
        expected = w * Z[0] + (1 - w) * beta_known[0]
        got = post.latent_y[:, 0, :].mean(axis=0)
        sd = np.sqrt(1.0 / (1 / s2e + 1 / s2h))
        tol = 3 * sd / np.sqrt(post.latent_y.shape[0])
        np.testing.assert_allclose(got, expected, atol=3.5 * tol)

    def test_full_fit_recovers_truth_loosely(self):
        rng = np.random.default_rng(44)
        n, t_len = 5, 160
        coords = rng.uniform(0, 120, (n, 2))
        phi = 0.025
        S = exp_correlation(coords, phi)
        beta = np.array([12.0, 1.1, -0.5])
        X = np.concatenate([np.ones((t_len, n, 1)), rng.normal(0, 3, (t_len, n, 2))], axis=2)
        s2e, s2h = 4.0, 25.0
        eta = np.linalg.cholesky(s2h * S) @ rng.standard_normal((n, t_len))
        Z = np.einsum("tnp,p->nt", X, beta) + eta + rng.normal(0, np.sqrt(s2e), (n, t_len))
        spec = GpSpec(coords_km=coords, phi=phi, burn_in=300, keep=1200)
        post = gibbs_fit(spec, Z, X, seed=7)
        for i in range(3):
            sd = post.beta[:, i].std()
            assert abs(post.beta[:, i].mean() - beta[i]) < 5 * sd
        assert post.sigma2_eps.mean() == pytest.approx(s2e, rel=0.6)
        assert post.sigma2_eta.mean() == pytest.approx(s2h, rel=0.6)
        assert (post.sigma2_eps > 0).all() and (post.sigma2_eta > 0).all()

    def test_seed_reproducibility(self):
        coords, X, Z, S, s2e, s2h = _toy_problem()
        spec = GpSpec(coords_km=coords, phi=0.05, burn_in=50, keep=100)
        a = gibbs_fit(spec, Z, X, seed=3)
        b = gibbs_fit(spec, Z, X, seed=3)
        np.testing.assert_array_equal(a.beta, b.beta)
        np.testing.assert_array_equal(a.sigma2_eps, b.sigma2_eps)
        np.testing.assert_array_equal(a.latent_y, b.latent_y)
        c = gibbs_fit(spec, Z, X, seed=4)
        assert not np.array_equal(a.beta, c.beta)

    def test_input_validation(self):
        coords, X, Z, *_ = _toy_problem()
        spec = GpSpec(coords_km=coords, phi=0.05, burn_in=2, keep=2)
        bad = Z.copy()
        bad[0, 0] = np.nan
        with pytest.raises(GpModelError, match="missing"):
            gibbs_fit(spec, bad, X, seed=1)
        with pytest.raises(GpModelError, match="shape"):
            gibbs_fit(spec, Z, X[:, :1, :], seed=1)


class TestDiagnostics:
    def test_iid_chain_lag1_near_zero(self):
        rng = np.random.default_rng(50)
        x = rng.standard_normal(4000)
        assert abs(autocorrelation(x, 1)[1]) < 0.1
        ess = effective_sample_size(x)
        assert 2000 < ess <= 4000 * 1.5

    def test_ar1_chain_lag1_matches_rho(self):
        rng = np.random.default_rng(51)
        rho = 0.9
        x = np.empty(20000)
        x[0] = 0.0
        noise = rng.standard_normal(20000)
        for i in range(1, 20000):
            x[i] = rho * x[i - 1] + noise[i]
        assert autocorrelation(x, 1)[1] == pytest.approx(rho, abs=0.05)
        # ESS should shrink roughly by (1-rho)/(1+rho)
        assert effective_sample_size(x) < 4000

    def test_constant_chain_degenerate(self):
        x = np.full(500, 2.5)
        assert np.isnan(effective_sample_size(x))

    def test_diagnostics_report(self):
        coords, X, Z, *_ = _toy_problem()
        spec = GpSpec(coords_km=coords, phi=0.05, burn_in=100, keep=400)
        post = gibbs_fit(spec, Z, X, seed=11)
        diag = diagnostics(post)
        assert set(diag) == {"beta0", "beta1", "sigma2_eps", "sigma2_eta"}
        for entry in diag.values():
            assert len(entry["acf"]) == 50
            assert entry["ess"] > 1
            assert not entry["degenerate"]

    def test_keep_too_small(self):
        coords, X, Z, *_ = _toy_problem()
        spec = GpSpec(coords_km=coords, phi=0.05, burn_in=10, keep=50)
        post = gibbs_fit(spec, Z, X, seed=11)
        with pytest.raises(GpModelError):
            diagnostics(post)


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        coords, X, Z, *_ = _toy_problem()
        spec = GpSpec(coords_km=coords, phi=0.05, burn_in=20, keep=60, thin_latent=3)
        post = gibbs_fit(spec, Z, X, seed=2)
        post.meta["train_site_ids"] = ["a", "b"]
        csv_path = str(tmp_path / "posterior.csv")
        save_posterior(csv_path, post, str(tmp_path / "latent"))
        back = load_posterior(csv_path, str(tmp_path / "latent"))
        np.testing.assert_array_equal(back.beta, post.beta)
        np.testing.assert_array_equal(back.sigma2_eps, post.sigma2_eps)
        np.testing.assert_array_equal(back.sigma2_eta, post.sigma2_eta)
        np.testing.assert_array_equal(back.latent_y, post.latent_y)
        np.testing.assert_array_equal(back.latent_iters, post.latent_iters)
        assert back.phi == post.phi
        assert back.seed == post.seed
        assert back.meta["train_site_ids"] == ["a", "b"]
