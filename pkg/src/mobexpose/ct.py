"""Connecticut monitoring-network reference coordinates.

Twelve EPA AQS ozone monitor locations active in CT during summer 2016,
taken from public AQS site listings. Ten are used for model fitting; the
Stafford and Stratford sites are reserved for validation. These coordinates
anchor the default spatial-decay parameter (3 / d_max over the training
network, in 1/km) and the desk-scale synthetic scenario geometry.
"""

from __future__ import annotations

from .geo import GeoPoint

# (aqs_site_id, town, lat, lon, role)
MONITORS: list[tuple[str, str, float, float, str]] = [
    ("09-001-0017", "Greenwich", 41.00417, -73.58500, "train"),
    ("09-001-1123", "Danbury", 41.39861, -73.44333, "train"),
    ("09-001-3007", "Stratford", 41.15167, -73.10361, "validate"),
    ("09-001-9003", "Westport", 41.11833, -73.33667, "train"),
    ("09-003-1003", "East Hartford", 41.78472, -72.63167, "train"),
    ("09-005-0005", "Cornwall", 41.82139, -73.29722, "train"),
    ("09-007-0007", "Middletown", 41.55472, -72.64306, "train"),
    ("09-009-0027", "Madison", 41.25583, -72.55306, "train"),
    ("09-009-2123", "New Haven", 41.30111, -72.90278, "train"),
    ("09-011-0124", "Groton", 41.35361, -72.07889, "train"),
    ("09-013-1001", "Stafford", 41.96972, -72.38917, "validate"),
    ("09-015-9991", "Abington", 41.84028, -71.97389, "train"),
]

TRAINING_IDS = [m[0] for m in MONITORS if m[4] == "train"]
VALIDATION_IDS = [m[0] for m in MONITORS if m[4] == "validate"]

# Connecticut bounding box used by the synthetic generator presets.
CT_BOX = (40.98, 42.05, -73.73, -71.78)  # (lat_min, lat_max, lon_min, lon_max)


def monitor_points(role: str | None = None) -> list[GeoPoint]:
    """GeoPoints of the CT monitors, optionally filtered to one role."""
    return [
        GeoPoint(lat, lon)
        for _, _, lat, lon, r in MONITORS
        if role is None or r == role
    ]


def monitor_ids(role: str | None = None) -> list[str]:
    return [sid for sid, _, _, _, r in MONITORS if role is None or r == role]
