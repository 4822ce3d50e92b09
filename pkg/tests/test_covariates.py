"""Design-matrix assembly and the empirical semivariogram."""

import numpy as np
import pytest

from mobexpose.covariates import (
    CovariateError,
    build_design,
    empirical_semivariogram,
    fit_exponential_semivariogram,
    road_distances_m,
)
from mobexpose.geo import GeoPoint, network_centroid, point_to_polyline_m
from mobexpose.ingest import MeteoSeries, Road


def _meteo(t_len=48, seed=0):
    rng = np.random.default_rng(seed)
    return [
        MeteoSeries(
            f"w{i}",
            GeoPoint(41.1 + 0.25 * i, -72.9 + 0.2 * i),
            rng.normal(24, 4, t_len),
            np.abs(rng.normal(3, 1, t_len)),
        )
        for i in range(4)
    ]


def _roads():
    return [
        Road("p1", "primary", [GeoPoint(41.0, -73.2), GeoPoint(41.3, -72.6), GeoPoint(41.6, -72.0)]),
        Road("s1", "secondary", [GeoPoint(41.7, -73.0), GeoPoint(41.5, -72.5)]),
        Road("s2", "secondary", [GeoPoint(41.1, -72.4), GeoPoint(41.2, -72.2)]),
    ]


class TestBuildDesign:
    def test_colocated_site_copies_station_values(self):
        meteo = _meteo()
        sites = [meteo[2].location]
        design = build_design(sites, meteo, _roads())
        np.testing.assert_array_equal(design[:, 0, 1], meteo[2].temp_c)
        np.testing.assert_array_equal(design[:, 0, 2], meteo[2].wind_ms)
        assert (design[:, 0, 0] == 1.0).all()

    def test_shapes_paper_layout(self):
        rng = np.random.default_rng(2)
        sites = [
            GeoPoint(float(rng.uniform(41.0, 42.0)), float(rng.uniform(-73.5, -72.0)))
            for _ in range(10)
        ]
        meteo = _meteo(t_len=744)
        design = build_design(sites, meteo, _roads())
        assert design.shape == (744, 10, 5)

    def test_nearest_station_matches_exhaustive_scan(self):
        rng = np.random.default_rng(3)
        sites = [
            GeoPoint(float(rng.uniform(41.0, 42.0)), float(rng.uniform(-73.5, -72.0)))
            for _ in range(25)
        ]
        meteo = _meteo()
        design = build_design(sites, meteo, _roads())
        from mobexpose.geo import haversine_m

        for i, s in enumerate(sites):
            best = min(range(len(meteo)), key=lambda j: haversine_m(s, meteo[j].location))
            np.testing.assert_array_equal(design[:, i, 1], meteo[best].temp_c)

    def test_road_distances_match_polyline_op(self):
        sites = [GeoPoint(41.25, -72.8), GeoPoint(41.62, -72.3)]
        roads = _roads()
        origin = network_centroid(sites)
        d_primary = road_distances_m(sites, roads, "primary", origin)
        for i, s in enumerate(sites):
            direct = point_to_polyline_m(s, roads[0].vertices)
            assert d_primary[i] == pytest.approx(direct, rel=6e-3, abs=2.0)

    def test_missing_road_class_errors(self):
        roads = [r for r in _roads() if r.road_class == "primary"]
        with pytest.raises(CovariateError, match="secondary"):
            build_design([GeoPoint(41.3, -72.7)], _meteo(), roads)

    def test_gappy_meteo_rejected(self):
        meteo = _meteo()
        meteo[0].temp_c[3] = np.nan
        with pytest.raises(CovariateError, match="gaps"):
            build_design([GeoPoint(41.3, -72.7)], meteo, _roads())

    def test_reproducible(self):
        sites = [GeoPoint(41.3, -72.7), GeoPoint(41.5, -72.5)]
        a = build_design(sites, _meteo(), _roads())
        b = build_design(sites, _meteo(), _roads())
        np.testing.assert_array_equal(a, b)


def semivariogram_oracle(values, coords, edges):
    """Brute-force pair enumeration of the Matheron estimator."""
    n, t_len = values.shape
    k = len(edges) - 1
    sums = np.zeros(k)
    counts = np.zeros(k, dtype=int)
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.hypot(*(coords[i] - coords[j])))
            b = min(max(np.searchsorted(edges, d, side="right") - 1, 0), k - 1)
            for t in range(t_len):
                diff = values[i, t] - values[j, t]
                if np.isnan(diff):
                    continue
                sums[b] += diff**2
                counts[b] += 1
    gamma = np.full(k, np.nan)
    gamma[counts > 0] = sums[counts > 0] / (2 * counts[counts > 0])
    return gamma, counts


class TestSemivariogram:
    def test_constant_field_is_zero(self):
        coords = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 20.0], [15.0, 15.0]])
        values = np.full((4, 6), 3.3)
        est = empirical_semivariogram(values, coords, bins=4)
        nonempty = est.pair_counts > 0
        assert np.allclose(est.semivariance[nonempty], 0.0)
        assert np.isnan(est.semivariance[~nonempty]).all()

    def test_two_sites_formula(self):
        coords = np.array([[0.0, 0.0], [7.0, 0.0]])
        values = np.array([[1.0, 3.0, 5.0], [2.0, 0.0, 5.0]])
        est = empirical_semivariogram(values, coords, bins=1)
        expected = np.mean([(1 - 2) ** 2, (3 - 0) ** 2, 0.0]) / 2
        assert est.semivariance[0] == pytest.approx(expected)
        assert est.pair_counts[0] == 3

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(21)
        coords = rng.uniform(0, 100, (5, 2))
        values = rng.normal(10, 4, (5, 40))
        values[rng.random((5, 40)) < 0.1] = np.nan
        est = empirical_semivariogram(values, coords, bins=6)
        gamma, counts = semivariogram_oracle(values, coords, est.bin_edges)
        np.testing.assert_array_equal(est.pair_counts, counts)
        np.testing.assert_allclose(est.semivariance, gamma, equal_nan=True)

    def test_pair_count_conservation(self):
        rng = np.random.default_rng(22)
        n, t_len = 8, 20
        coords = rng.uniform(0, 50, (n, 2))
        values = rng.normal(size=(n, t_len))
        est = empirical_semivariogram(values, coords, bins=5)
        assert est.pair_counts.sum() == n * (n - 1) // 2 * t_len

    def test_shift_invariance(self):
        rng = np.random.default_rng(23)
        coords = rng.uniform(0, 50, (6, 2))
        values = rng.normal(size=(6, 12))
        a = empirical_semivariogram(values, coords, bins=4)
        b = empirical_semivariogram(values + 100.0, coords, bins=4)
        np.testing.assert_allclose(a.semivariance, b.semivariance, equal_nan=True)

    def test_single_site_rejected(self):
        with pytest.raises(CovariateError):
            empirical_semivariogram(np.ones((1, 5)), np.zeros((1, 2)))

    def test_exponential_fit_recovers_shape(self):
        rng = np.random.default_rng(24)
        coords = rng.uniform(0, 160, (40, 2))
        d = np.sqrt(((coords[:, None] - coords[None, :]) ** 2).sum(-1))
        sill, phi = 9.0, 0.03
        cov = sill * np.exp(-phi * d)
        chol = np.linalg.cholesky(cov + 1e-9 * np.eye(40))
        values = chol @ rng.standard_normal((40, 400))
        est = empirical_semivariogram(values, coords, bins=12)
        fit = fit_exponential_semivariogram(est)
        assert fit["sill"] == pytest.approx(sill, rel=0.35)
        assert fit["phi_per_km"] == pytest.approx(phi, rel=0.5)
