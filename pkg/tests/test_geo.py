"""Geometry primitives against independent oracles."""

import math

import numpy as np
import pytest

from mobexpose import ct
from mobexpose.geo import (
    EARTH_RADIUS_M,
    GeoPoint,
    ProjectionDomainError,
    haversine_m,
    haversine_m_arrays,
    nearest,
    network_centroid,
    point_to_polyline_m,
    points_to_polylines_m,
    project,
    project_arrays,
)


def spherical_law_of_cosines_m(a: GeoPoint, b: GeoPoint) -> float:
    """Independent great-circle oracle (different formula than haversine)."""
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dl = math.radians(b.lon - a.lon)
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return EARTH_RADIUS_M * math.acos(min(1.0, max(-1.0, c)))


def test_haversine_identity():
    p = GeoPoint(41.0, -73.0)
    assert haversine_m(p, p) == 0.0


def test_haversine_against_law_of_cosines():
    a = GeoPoint(41.0, -73.0)
    b = GeoPoint(41.0, -72.0)
    expected = spherical_law_of_cosines_m(a, b)
    assert haversine_m(a, b) == pytest.approx(expected, rel=1e-4)


def test_haversine_antipodal():
    assert haversine_m(GeoPoint(0, 0), GeoPoint(0, 180)) == pytest.approx(
        math.pi * EARTH_RADIUS_M, abs=1.0
    )


def test_haversine_symmetry_and_triangle_inequality():
    rng = np.random.default_rng(7)
    for _ in range(200):
        pts = [
            GeoPoint(float(rng.uniform(-80, 80)), float(rng.uniform(-179, 179)))
            for _ in range(3)
        ]
        dab = haversine_m(pts[0], pts[1])
        assert dab == haversine_m(pts[1], pts[0])
        assert dab <= haversine_m(pts[0], pts[2]) + haversine_m(pts[2], pts[1]) + 1e-6


def test_geopoint_validation():
    with pytest.raises(ValueError):
        GeoPoint(91.0, 0.0)
    with pytest.raises(ValueError):
        GeoPoint(0.0, 181.0)
    with pytest.raises(ValueError):
        GeoPoint(float("nan"), 0.0)


def test_project_origin_is_zero():
    o = GeoPoint(41.5, -72.7)
    p = project(o, o)
    assert (p.x, p.y) == (0.0, 0.0)


def test_project_one_degree_north():
    o = GeoPoint(41.0, -72.5)
    p = project(o, GeoPoint(42.0, -72.5))
    assert p.y == pytest.approx(111.19, abs=0.1)
    assert p.x == pytest.approx(0.0, abs=1e-9)


def test_projection_isometry_on_ct_monitors():
    pts = ct.monitor_points()
    origin = network_centroid(pts)
    plane = project_arrays(
        origin, np.array([p.lat for p in pts]), np.array([p.lon for p in pts])
    )
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            plane_km = float(np.hypot(*(plane[i] - plane[j])))
            true_km = haversine_m(pts[i], pts[j]) / 1000.0
            assert plane_km == pytest.approx(true_km, rel=5e-3)


def test_projection_isometry_random_200km_box():
    rng = np.random.default_rng(11)
    origin = GeoPoint(41.5, -72.7)
    lat = rng.uniform(41.5 - 0.9, 41.5 + 0.9, 40)
    lon = rng.uniform(-72.7 - 1.2, -72.7 + 1.2, 40)
    plane = project_arrays(origin, lat, lon)
    for i in range(0, 40, 3):
        for j in range(i + 1, 40, 3):
            plane_km = float(np.hypot(*(plane[i] - plane[j])))
            true_km = (
                haversine_m(GeoPoint(lat[i], lon[i]), GeoPoint(lat[j], lon[j])) / 1000.0
            )
            if true_km > 0.5:
                assert plane_km == pytest.approx(true_km, rel=5e-3)


def test_project_rejects_far_points():
    with pytest.raises(ProjectionDomainError):
        project(GeoPoint(41.0, -72.0), GeoPoint(48.0, -60.0))


def test_nearest_exact_and_tie_rule():
    site = GeoPoint(41.0, -72.0)
    cands = [GeoPoint(40.0, -72.0), GeoPoint(44.0, -72.0), GeoPoint(40.5, -72.0), GeoPoint(41.0, -72.0)]
    assert nearest(site, cands) == 3
    # candidates 1 and 4 equidistant -> lowest index wins
    site2 = GeoPoint(41.0, -72.0)
    cands2 = [
        GeoPoint(43.0, -72.0),
        GeoPoint(41.5, -72.0),
        GeoPoint(42.9, -72.0),
        GeoPoint(44.0, -72.0),
        GeoPoint(40.5, -72.0),
    ]
    assert nearest(site2, cands2) == 1


def test_nearest_matches_linear_scan():
    rng = np.random.default_rng(3)
    site = GeoPoint(41.3, -72.8)
    cands = [
        GeoPoint(float(rng.uniform(40.8, 42.2)), float(rng.uniform(-73.5, -71.9)))
        for _ in range(50)
    ]
    best = min(range(50), key=lambda i: haversine_m(site, cands[i]))
    assert nearest(site, cands) == best


def test_nearest_empty_errors():
    with pytest.raises(ValueError):
        nearest(GeoPoint(0, 0), [])


def test_polyline_vertex_distance_zero():
    road = [GeoPoint(41.0, -72.5), GeoPoint(41.2, -72.4), GeoPoint(41.4, -72.2)]
    assert point_to_polyline_m(road[1], road) == pytest.approx(0.0, abs=1e-6)


def test_polyline_perpendicular_offset():
    # long meridian segment; point offset east at mid-latitude
    road = [GeoPoint(40.5, -72.5), GeoPoint(42.5, -72.5)]
    p = GeoPoint(41.5, -72.35)
    expected = haversine_m(p, GeoPoint(41.5, -72.5))
    assert point_to_polyline_m(p, road) == pytest.approx(expected, rel=5e-3)


def test_polyline_against_dense_sampling_oracle():
    rng = np.random.default_rng(5)
    road = [GeoPoint(41.0, -73.0)]
    lat, lon = 41.0, -73.0
    for _ in range(6):
        lat += float(rng.uniform(-0.05, 0.12))
        lon += float(rng.uniform(0.02, 0.15))
        road.append(GeoPoint(lat, lon))
    p = GeoPoint(41.08, -72.7)
    # oracle: sample each great-circle segment every ~1 m, min point distance
    def unit(pt):
        la, lo = math.radians(pt.lat), math.radians(pt.lon)
        return np.array([math.cos(la) * math.cos(lo), math.cos(la) * math.sin(lo), math.sin(la)])

    best = np.inf
    for a, b in zip(road[:-1], road[1:]):
        seg_m = haversine_m(a, b)
        k = max(2, int(seg_m))
        ua, ub = unit(a), unit(b)
        omega = math.acos(min(1.0, float(ua @ ub)))
        ts = np.linspace(0.0, 1.0, k)[:, None]
        pts = (np.sin((1 - ts) * omega) * ua + np.sin(ts * omega) * ub) / math.sin(omega)
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        lats = np.degrees(np.arcsin(pts[:, 2]))
        lons = np.degrees(np.arctan2(pts[:, 1], pts[:, 0]))
        d = haversine_m_arrays(p.lat, p.lon, lats, lons)
        best = min(best, float(d.min()))
    assert point_to_polyline_m(p, road) == pytest.approx(best, abs=1.0)


def test_polyline_single_vertex_degenerates_to_point():
    p = GeoPoint(41.0, -72.0)
    v = GeoPoint(41.1, -72.1)
    assert point_to_polyline_m(p, [v]) == pytest.approx(haversine_m(p, v), rel=1e-9)


def test_points_to_polylines_matches_scalar():
    rng = np.random.default_rng(9)
    lines = []
    for _ in range(3):
        lat0 = float(rng.uniform(41.0, 41.8))
        lon0 = float(rng.uniform(-73.2, -72.2))
        lines.append(
            [
                GeoPoint(lat0, lon0),
                GeoPoint(lat0 + 0.2, lon0 + 0.1),
                GeoPoint(lat0 + 0.25, lon0 + 0.4),
            ]
        )
    lat = rng.uniform(41.0, 42.0, 8)
    lon = rng.uniform(-73.3, -72.0, 8)
    origin = GeoPoint(41.5, -72.7)
    batch = points_to_polylines_m(lat, lon, lines, origin)
    for i in range(8):
        scalar = min(point_to_polyline_m(GeoPoint(lat[i], lon[i]), ln) for ln in lines)
        # batch projects around the shared origin, scalar around each point
        assert batch[i] == pytest.approx(scalar, rel=6e-3, abs=2.0)
