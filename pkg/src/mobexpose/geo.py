"""Coordinate handling, great-circle distances, and nearest-neighbor assignment.

All spatial operations in the pipeline funnel through this module: monitor
and tower coordinates live on the sphere (lat/lon degrees), while covariance
and point-to-road computations happen in a local equirectangular plane with
kilometer units.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import asin, cos, radians, sin, sqrt

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
EARTH_RADIUS_KM = 6_371.0

# Beyond this distance from the projection origin the equirectangular
# approximation degrades past our 0.5% isometry budget.
MAX_PROJECT_KM = 500.0


class ProjectionDomainError(ValueError):
    """Point is too far from the projection origin to project safely."""


@dataclass(frozen=True)
class GeoPoint:
    """Point on the sphere, degrees. lat in [-90, 90], lon in [-180, 180]."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lat) and np.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate: ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class PlanePoint:
    """Point in the local projected plane: km east (x) and km north (y)."""

    x: float
    y: float


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points in meters."""
    lat1, lon1, lat2, lon2 = map(radians, (a.lat, a.lon, b.lat, b.lon))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = sin(dlat / 2.0) ** 2 + cos(lat1) * cos(lat2) * sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * asin(min(1.0, sqrt(h)))


def haversine_m_arrays(
    lat1: np.ndarray, lon1: np.ndarray, lat2: np.ndarray, lon2: np.ndarray
) -> np.ndarray:
    """Vectorized haversine in meters; inputs broadcast against each other."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=float)) for v in (lat1, lon1, lat2, lon2))
    h = (
        np.sin((lat2 - lat1) / 2.0) ** 2
        + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def project(origin: GeoPoint, p: GeoPoint) -> PlanePoint:
    """Project `p` onto a local plane centered at `origin` (km east/north).

    Azimuthal equidistant about the origin: distances from the origin are
    exact and pairwise Euclidean distances track the great-circle distance
    to well under 0.1% over a few hundred km (a fixed-scale equirectangular
    plane cannot hold 0.5% at these latitudes). Points farther than
    MAX_PROJECT_KM are rejected, where even this flattening degrades.
    """
    pts = project_arrays(origin, np.array([p.lat]), np.array([p.lon]))
    return PlanePoint(float(pts[0, 0]), float(pts[0, 1]))


def project_arrays(origin: GeoPoint, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    """Vectorized azimuthal equidistant projection -> (n, 2) km offsets."""
    lat = np.radians(np.asarray(lat, dtype=float))
    lon = np.radians(np.asarray(lon, dtype=float))
    lat0 = radians(origin.lat)
    lon0 = radians(origin.lon)
    dlon = lon - lon0
    cos_c = np.clip(
        sin(lat0) * np.sin(lat) + cos(lat0) * np.cos(lat) * np.cos(dlon), -1.0, 1.0
    )
    c = np.arccos(cos_c)
    sin_c = np.sin(c)
    # k = c / sin(c), -> 1 as c -> 0
    k = np.where(sin_c > 1e-12, c / np.where(sin_c > 1e-12, sin_c, 1.0), 1.0)
    x = EARTH_RADIUS_KM * k * np.cos(lat) * np.sin(dlon)
    y = EARTH_RADIUS_KM * k * (cos(lat0) * np.sin(lat) - sin(lat0) * np.cos(lat) * np.cos(dlon))
    pts = np.column_stack([x, y])
    d_km = EARTH_RADIUS_KM * c
    if d_km.size and d_km.max() > MAX_PROJECT_KM:
        worst = int(np.argmax(d_km))
        raise ProjectionDomainError(
            f"point {worst} is {d_km[worst]:.0f} km from projection origin "
            f"(limit {MAX_PROJECT_KM:.0f} km)"
        )
    return pts


def network_centroid(points: list[GeoPoint]) -> GeoPoint:
    """Coordinate-mean centroid, used as the canonical projection origin."""
    if not points:
        raise ValueError("empty point list")
    return GeoPoint(
        float(np.mean([p.lat for p in points])),
        float(np.mean([p.lon for p in points])),
    )


def nearest(site: GeoPoint, candidates: list[GeoPoint]) -> int:
    """Index of the haversine-nearest candidate; ties go to the lowest index."""
    if not candidates:
        raise ValueError("empty candidate list")
    d = haversine_m_arrays(
        site.lat,
        site.lon,
        np.array([c.lat for c in candidates]),
        np.array([c.lon for c in candidates]),
    )
    return int(np.argmin(d))


def _segment_distances_km(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from plane point `p` (2,) to segments a[i]->b[i] ((n,2) each)."""
    ab = b - a
    ap = p[None, :] - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.zeros(len(a))
    nz = denom > 0.0
    t[nz] = np.einsum("ij,ij->i", ap[nz], ab[nz]) / denom[nz]
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.hypot(*(p[None, :] - closest).T)


def point_to_polyline_m(p: GeoPoint, polyline: list[GeoPoint]) -> float:
    """Minimum distance in meters from `p` to a polyline of GeoPoints.

    Computed in a plane projected around `p` itself so distortion at the
    closest approach is minimal. A single-vertex polyline degenerates to
    point-to-point distance.
    """
    if not polyline:
        raise ValueError("empty polyline")
    if len(polyline) == 1:
        return haversine_m(p, polyline[0])
    verts = project_arrays(p, np.array([v.lat for v in polyline]), np.array([v.lon for v in polyline]))
    d_km = _segment_distances_km(np.zeros(2), verts[:-1], verts[1:])
    return float(d_km.min() * 1000.0)


def points_to_polylines_m(
    lat: np.ndarray, lon: np.ndarray, polylines: list[list[GeoPoint]], origin: GeoPoint
) -> np.ndarray:
    """Minimum distance in meters from each of n points to any of the polylines.

    Vectorized over (point, segment) pairs in the shared projection plane;
    used for the road-distance covariate where sites and roads live inside
    one study region.
    """
    if not polylines:
        raise ValueError("no polylines supplied")
    pts = project_arrays(origin, lat, lon)
    seg_a = []
    seg_b = []
    for line in polylines:
        verts = project_arrays(
            origin, np.array([v.lat for v in line]), np.array([v.lon for v in line])
        )
        if len(verts) == 1:
            seg_a.append(verts)
            seg_b.append(verts)
        else:
            seg_a.append(verts[:-1])
            seg_b.append(verts[1:])
    a = np.concatenate(seg_a)
    b = np.concatenate(seg_b)
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom_safe = np.where(denom > 0.0, denom, 1.0)
    # (n_points, n_segments) parameter of the perpendicular foot, clamped
    t = np.einsum("pj,sj->ps", pts, ab) - np.einsum("sj,sj->s", a, ab)[None, :]
    t = np.clip(t / denom_safe[None, :], 0.0, 1.0)
    t[:, denom == 0.0] = 0.0
    dx = pts[:, None, 0] - (a[None, :, 0] + t * ab[None, :, 0])
    dy = pts[:, None, 1] - (a[None, :, 1] + t * ab[None, :, 1])
    return np.sqrt(dx**2 + dy**2).min(axis=1) * 1000.0
