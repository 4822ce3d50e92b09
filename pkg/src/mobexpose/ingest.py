"""Parsers and writers for the five external CSV tables.

Schemas:
    monitors.csv  site_id,lat,lon,hour_index,ozone_ppb   (empty ppb = missing)
    meteo.csv     station_id,lat,lon,hour_index,temp_c,wind_ms
    towers.csv    tower_id,lat,lon
    handoffs.csv  device_id,timestamp_utc,tower_id       (RFC 3339 timestamps)
    roads.csv     road_id,class,vertex_index,lat,lon     (class: primary|secondary)

Every loader validates into typed in-memory tables; missing-data handling is
deterministic (explicit markers, last-observation-carried-forward fill).
Writers round-trip: load(write(x)) == x.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Iterator

import numpy as np
import pandas as pd

from .geo import GeoPoint
from .timebase import format_rfc3339, parse_rfc3339_array

log = logging.getLogger(__name__)

ROAD_CLASSES = ("primary", "secondary")
HANDOFF_CHUNK_ROWS = 4_000_000


class IngestError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class MonitorSeries:
    site_id: str
    location: GeoPoint
    values: np.ndarray  # hourly ppb, NaN where missing


@dataclass
class MeteoSeries:
    station_id: str
    location: GeoPoint
    temp_c: np.ndarray
    wind_ms: np.ndarray


@dataclass(frozen=True)
class TowerSite:
    tower_id: str
    location: GeoPoint


@dataclass(frozen=True)
class HandoffRecord:
    device_id: str
    timestamp: int  # UTC epoch seconds
    tower_id: str


@dataclass
class Road:
    road_id: str
    road_class: str
    vertices: list[GeoPoint]


@dataclass
class HandoffTable:
    """Columnar hand-off store: one row per record, file order preserved.

    `device_ids[device_code[i]]` and `towers[tower_code[i]]` resolve row i.
    Device codes are assigned by first appearance in the file.
    """

    device_ids: np.ndarray  # (n_devices,) str
    device_code: np.ndarray  # (n_records,) int32
    timestamp: np.ndarray  # (n_records,) int64 UTC seconds
    tower_code: np.ndarray  # (n_records,) int32 into `towers`
    towers: list[TowerSite]

    def __len__(self) -> int:
        return len(self.timestamp)

    @property
    def n_devices(self) -> int:
        return len(self.device_ids)

    def records(self) -> Iterator[HandoffRecord]:
        tower_ids = [t.tower_id for t in self.towers]
        for d, ts, tw in zip(self.device_code, self.timestamp, self.tower_code):
            yield HandoffRecord(str(self.device_ids[d]), int(ts), tower_ids[tw])


def _float_or_nan(text: str) -> float:
    return np.nan if text == "" else float(text)


def _grid_from_rows(
    rows: dict[str, dict[int, tuple[int, tuple[float, ...]]]],
    path: str,
) -> int:
    """Validate that every site covers the identical hour grid 0..T-1."""
    if not rows:
        return 0
    t_len = None
    for site_id, by_hour in rows.items():
        hours = sorted(by_hour)
        if hours != list(range(len(hours))):
            raise IngestError(
                f"{path}: site {site_id} hour indices are not contiguous from 0"
            )
        if t_len is None:
            t_len = len(hours)
        elif len(hours) != t_len:
            raise IngestError(
                f"{path}: site {site_id} has {len(hours)} hours, expected {t_len}"
            )
    return t_len or 0


def _read_site_hour_csv(
    path: str, header: list[str], n_values: int
) -> tuple[dict[str, GeoPoint], dict[str, dict[int, tuple[int, tuple[float, ...]]]]]:
    """Shared reader for monitors.csv / meteo.csv style tables."""
    locations: dict[str, GeoPoint] = {}
    rows: dict[str, dict[int, tuple[int, tuple[float, ...]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            return {}, {}
        if got != header:
            raise IngestError(f"{path}: header {got!r}, expected {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                site_id = row[0]
                loc = GeoPoint(float(row[1]), float(row[2]))
                hour = int(row[3])
                values = tuple(_float_or_nan(v) for v in row[4 : 4 + n_values])
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from exc
            if hour < 0:
                raise IngestError(f"{path}:{lineno}: negative hour index {hour}")
            known = locations.get(site_id)
            if known is None:
                locations[site_id] = loc
            elif known != loc:
                raise IngestError(
                    f"{path}:{lineno}: site {site_id} reappears with different coordinates"
                )
            site_rows = rows.setdefault(site_id, {})
            if hour in site_rows:
                raise IngestError(
                    f"{path}:{lineno}: duplicate (site {site_id}, hour {hour}); "
                    f"first seen at line {site_rows[hour][0]}"
                )
            site_rows[hour] = (lineno, values)
    return locations, rows


def load_monitors(path: str) -> list[MonitorSeries]:
    """Load per-site contiguous hourly ozone series.

    Negative observed concentrations are clamped to zero (instrument
    artifacts); the clamp count is logged.
    """
    locations, rows = _read_site_hour_csv(
        path, ["site_id", "lat", "lon", "hour_index", "ozone_ppb"], 1
    )
    t_len = _grid_from_rows(rows, path)
    out: list[MonitorSeries] = []
    clamped = 0
    for site_id in rows:
        values = np.full(t_len, np.nan)
        for hour, (_, (ppb,)) in rows[site_id].items():
            values[hour] = ppb
        neg = values < 0
        clamped += int(np.count_nonzero(neg))
        values[neg] = 0.0
        out.append(MonitorSeries(site_id, locations[site_id], values))
    if clamped:
        log.warning("%s: clamped %d negative ozone values to 0", path, clamped)
    return out


def write_monitors(path: str, series: list[MonitorSeries]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "lat", "lon", "hour_index", "ozone_ppb"])
        for s in series:
            for h, v in enumerate(s.values):
                w.writerow(
                    [s.site_id, repr(s.location.lat), repr(s.location.lon), h]
                    + (["" if np.isnan(v) else repr(float(v))])
                )


def load_meteo(path: str) -> list[MeteoSeries]:
    locations, rows = _read_site_hour_csv(
        path, ["station_id", "lat", "lon", "hour_index", "temp_c", "wind_ms"], 2
    )
    t_len = _grid_from_rows(rows, path)
    out: list[MeteoSeries] = []
    for sid in rows:
        temp = np.full(t_len, np.nan)
        wind = np.full(t_len, np.nan)
        for hour, (_, (t, w)) in rows[sid].items():
            temp[hour] = t
            wind[hour] = w
        out.append(MeteoSeries(sid, locations[sid], temp, wind))
    return out


def write_meteo(path: str, series: list[MeteoSeries]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station_id", "lat", "lon", "hour_index", "temp_c", "wind_ms"])
        for s in series:
            for h in range(len(s.temp_c)):
                t, ws = s.temp_c[h], s.wind_ms[h]
                w.writerow(
                    [
                        s.station_id,
                        repr(s.location.lat),
                        repr(s.location.lon),
                        h,
                        "" if np.isnan(t) else repr(float(t)),
                        "" if np.isnan(ws) else repr(float(ws)),
                    ]
                )


def load_towers(path: str) -> list[TowerSite]:
    out: list[TowerSite] = []
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if header != ["tower_id", "lat", "lon"]:
            raise IngestError(f"{path}: unexpected header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                tower = TowerSite(row[0], GeoPoint(float(row[1]), float(row[2])))
            except (ValueError, IndexError) as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from exc
            if tower.tower_id in seen:
                raise IngestError(f"{path}:{lineno}: duplicate tower_id {tower.tower_id}")
            seen.add(tower.tower_id)
            out.append(tower)
    return out


def write_towers(path: str, towers: list[TowerSite]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tower_id", "lat", "lon"])
        for t in towers:
            w.writerow([t.tower_id, repr(t.location.lat), repr(t.location.lon)])


def load_roads(path: str) -> list[Road]:
    """Load class-tagged polylines; vertices must index contiguously from 0."""
    verts: dict[str, dict[int, tuple[int, GeoPoint]]] = {}
    classes: dict[str, str] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if header != ["road_id", "class", "vertex_index", "lat", "lon"]:
            raise IngestError(f"{path}: unexpected header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                road_id, cls, idx_s, lat_s, lon_s = row
                idx = int(idx_s)
                point = GeoPoint(float(lat_s), float(lon_s))
            except (ValueError, IndexError) as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from exc
            if cls not in ROAD_CLASSES:
                raise IngestError(f"{path}:{lineno}: unknown road class {cls!r}")
            if road_id not in classes:
                classes[road_id] = cls
                order.append(road_id)
            elif classes[road_id] != cls:
                raise IngestError(f"{path}:{lineno}: road {road_id} changes class")
            road_verts = verts.setdefault(road_id, {})
            if idx in road_verts:
                raise IngestError(f"{path}:{lineno}: duplicate vertex {idx} of road {road_id}")
            road_verts[idx] = (lineno, point)
    roads = []
    for road_id in order:
        by_idx = verts[road_id]
        if sorted(by_idx) != list(range(len(by_idx))):
            raise IngestError(f"{path}: road {road_id} vertex indices are not contiguous from 0")
        roads.append(
            Road(road_id, classes[road_id], [by_idx[i][1] for i in range(len(by_idx))])
        )
    return roads


def write_roads(path: str, roads: list[Road]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["road_id", "class", "vertex_index", "lat", "lon"])
        for r in roads:
            for i, v in enumerate(r.vertices):
                w.writerow([r.road_id, r.road_class, i, repr(v.lat), repr(v.lon)])


def load_handoff_table(path: str, towers: list[TowerSite]) -> HandoffTable:
    """Chunked columnar hand-off loader sized for tens of millions of rows.

    Records are kept in file order (the tie-break key downstream) and are not
    required to be pre-sorted. Any reference to a tower absent from `towers`
    aborts with the full list of offending ids.
    """
    tower_index = pd.Index([t.tower_id for t in towers])
    device_index = pd.Index([], dtype=object)
    codes: list[np.ndarray] = []
    stamps: list[np.ndarray] = []
    tower_codes: list[np.ndarray] = []
    unknown: set[str] = set()
    reader = pd.read_csv(
        path,
        dtype={"device_id": str, "timestamp_utc": str, "tower_id": str},
        chunksize=HANDOFF_CHUNK_ROWS,
    )
    expected = ["device_id", "timestamp_utc", "tower_id"]
    for chunk in reader:
        if list(chunk.columns) != expected:
            raise IngestError(f"{path}: unexpected header {list(chunk.columns)!r}")
        if chunk.isna().any().any():
            bad = int(chunk.index[chunk.isna().any(axis=1)][0]) + 2
            raise IngestError(f"{path}:{bad}: empty field")
        t_codes = tower_index.get_indexer(chunk["tower_id"])
        if (t_codes < 0).any():
            unknown.update(chunk["tower_id"].values[t_codes < 0])
            continue
        ids = chunk["device_id"].values
        d_codes = device_index.get_indexer(ids)
        if (d_codes < 0).any():
            new = pd.unique(ids[d_codes < 0])
            device_index = device_index.append(pd.Index(new))
            d_codes = device_index.get_indexer(ids)
        try:
            ts = parse_rfc3339_array(chunk["timestamp_utc"].values)
        except ValueError as exc:
            raise IngestError(f"{path}: bad timestamp ({exc})") from exc
        codes.append(d_codes.astype(np.int32))
        stamps.append(ts)
        tower_codes.append(t_codes.astype(np.int32))
    if unknown:
        shown = ", ".join(sorted(unknown)[:20])
        more = "" if len(unknown) <= 20 else f" (+{len(unknown) - 20} more)"
        raise IngestError(f"{path}: hand-offs reference unknown towers: {shown}{more}")
    if not codes:
        return HandoffTable(
            np.array([], dtype=object),
            np.array([], dtype=np.int32),
            np.array([], dtype=np.int64),
            np.array([], dtype=np.int32),
            towers,
        )
    return HandoffTable(
        device_index.values,
        np.concatenate(codes),
        np.concatenate(stamps),
        np.concatenate(tower_codes),
        towers,
    )


def load_handoffs(path: str, towers: list[TowerSite]) -> Iterator[HandoffRecord]:
    """Record-at-a-time view over the columnar loader."""
    yield from load_handoff_table(path, towers).records()


def write_handoffs(
    path: str,
    device_ids: np.ndarray,
    timestamps: np.ndarray,
    tower_ids: np.ndarray,
) -> None:
    """Write parallel arrays of records in the given order, chunked."""
    with open(path, "w", newline="") as fh:
        fh.write("device_id,timestamp_utc,tower_id\n")
        n = len(timestamps)
        for lo in range(0, n, HANDOFF_CHUNK_ROWS):
            hi = min(lo + HANDOFF_CHUNK_ROWS, n)
            stamp_text = np.datetime_as_string(
                timestamps[lo:hi].astype("datetime64[s]"), timezone="UTC"
            )
            pd.DataFrame(
                {
                    "device_id": device_ids[lo:hi],
                    "timestamp_utc": stamp_text,
                    "tower_id": tower_ids[lo:hi],
                }
            ).to_csv(fh, index=False, header=False)


def locf_fill(values: np.ndarray, leading_value: float | None = None) -> np.ndarray:
    """Fill gaps with the most recent prior value (never a future one).

    A leading gap has no prior value; the caller must supply `leading_value`
    explicitly or the fill is refused.
    """
    values = np.asarray(values, dtype=float)
    filled = values.copy()
    missing = np.isnan(filled)
    if missing.size and missing[0]:
        if leading_value is None:
            raise IngestError("leading gap and no explicit leading_value given")
        filled[0] = leading_value
        missing = np.isnan(filled)
    idx = np.where(~missing, np.arange(filled.size), 0)
    np.maximum.accumulate(idx, out=idx)
    return filled[idx]
