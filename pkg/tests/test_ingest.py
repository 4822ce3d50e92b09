"""Loaders, writers, and deterministic missing-data handling."""

import numpy as np
import pytest

from mobexpose.geo import GeoPoint
from mobexpose.ingest import (
    HandoffRecord,
    IngestError,
    MeteoSeries,
    MonitorSeries,
    Road,
    TowerSite,
    load_handoff_table,
    load_handoffs,
    load_meteo,
    load_monitors,
    load_roads,
    load_towers,
    locf_fill,
    write_handoffs,
    write_meteo,
    write_monitors,
    write_roads,
    write_towers,
)


def locf_oracle(values):
    """O(n^2) backward-scan reference."""
    values = np.asarray(values, dtype=float)
    out = values.copy()
    for i in range(len(out)):
        if np.isnan(out[i]):
            for j in range(i - 1, -1, -1):
                if not np.isnan(values[j]):
                    out[i] = out[j]
                    break
    return out


class TestLocf:
    def test_rule_definition(self):
        assert locf_fill(np.array([5.0, np.nan, np.nan, 7.0])).tolist() == [5.0, 5.0, 5.0, 7.0]

    def test_no_gaps_unchanged(self):
        x = np.array([1.0, 2.0, 3.0])
        assert locf_fill(x).tolist() == x.tolist()

    def test_random_pattern_matches_backward_scan_oracle(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=1000)
        gaps = rng.random(1000) < 0.35
        gaps[0] = False
        x[gaps] = np.nan
        got = locf_fill(x)
        np.testing.assert_array_equal(got, locf_oracle(x))
        assert not np.isnan(got).any()

    def test_idempotent(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=200)
        x[rng.random(200) < 0.3] = np.nan
        x[0] = 1.0
        once = locf_fill(x)
        np.testing.assert_array_equal(locf_fill(once), once)

    def test_leading_gap_requires_explicit_seed(self):
        x = np.array([np.nan, 2.0])
        with pytest.raises(IngestError):
            locf_fill(x)
        assert locf_fill(x, leading_value=9.0).tolist() == [9.0, 2.0]


def _monitor_fixture(n_sites=12, t_len=744, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_sites):
        values = np.abs(rng.normal(35, 15, t_len))
        out.append(
            MonitorSeries(
                f"s{i:02d}",
                GeoPoint(41.0 + 0.05 * i, -73.0 + 0.07 * i),
                values,
            )
        )
    return out


class TestMonitors:
    def test_roundtrip_identity(self, tmp_path):
        series = _monitor_fixture(5, 30)
        series[2].values[7] = np.nan
        path = tmp_path / "monitors.csv"
        write_monitors(str(path), series)
        back = load_monitors(str(path))
        assert [s.site_id for s in back] == [s.site_id for s in series]
        for a, b in zip(series, back):
            assert a.location == b.location
            np.testing.assert_array_equal(a.values, b.values)

    def test_paper_scale_fixture(self, tmp_path):
        series = _monitor_fixture(12, 744)
        path = tmp_path / "monitors.csv"
        write_monitors(str(path), series)
        back = load_monitors(str(path))
        assert len(back) == 12
        assert all(len(s.values) == 744 for s in back)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "monitors.csv"
        path.write_text("site_id,lat,lon,hour_index,ozone_ppb\n")
        assert load_monitors(str(path)) == []

    def test_duplicate_hour_names_row(self, tmp_path):
        path = tmp_path / "monitors.csv"
        path.write_text(
            "site_id,lat,lon,hour_index,ozone_ppb\n"
            "a,41.0,-72.0,0,10\n"
            "a,41.0,-72.0,1,11\n"
            "a,41.0,-72.0,1,12\n"
        )
        with pytest.raises(IngestError, match=r":4"):
            load_monitors(str(path))

    def test_negative_values_clamped(self, tmp_path):
        path = tmp_path / "monitors.csv"
        path.write_text(
            "site_id,lat,lon,hour_index,ozone_ppb\n"
            "a,41.0,-72.0,0,-3.5\n"
            "a,41.0,-72.0,1,12\n"
        )
        series = load_monitors(str(path))
        assert series[0].values.tolist() == [0.0, 12.0]

    def test_noncontiguous_hours_rejected(self, tmp_path):
        path = tmp_path / "monitors.csv"
        path.write_text(
            "site_id,lat,lon,hour_index,ozone_ppb\na,41.0,-72.0,0,10\na,41.0,-72.0,2,11\n"
        )
        with pytest.raises(IngestError, match="contiguous"):
            load_monitors(str(path))

    def test_mismatched_lengths_rejected(self, tmp_path):
        path = tmp_path / "monitors.csv"
        path.write_text(
            "site_id,lat,lon,hour_index,ozone_ppb\n"
            "a,41.0,-72.0,0,10\na,41.0,-72.0,1,11\nb,41.5,-72.2,0,9\n"
        )
        with pytest.raises(IngestError, match="expected"):
            load_monitors(str(path))

    def test_conflicting_coordinates_rejected(self, tmp_path):
        path = tmp_path / "monitors.csv"
        path.write_text(
            "site_id,lat,lon,hour_index,ozone_ppb\n"
            "a,41.0,-72.0,0,10\na,41.5,-72.0,1,11\n"
        )
        with pytest.raises(IngestError, match="different coordinates"):
            load_monitors(str(path))


class TestMeteoAndRoads:
    def test_meteo_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        series = [
            MeteoSeries(
                f"w{i}",
                GeoPoint(41.2 + 0.1 * i, -72.5),
                rng.normal(24, 5, 48),
                np.abs(rng.normal(3, 1, 48)),
            )
            for i in range(3)
        ]
        series[1].temp_c[5] = np.nan
        path = tmp_path / "meteo.csv"
        write_meteo(str(path), series)
        back = load_meteo(str(path))
        for a, b in zip(series, back):
            assert a.station_id == b.station_id
            np.testing.assert_array_equal(a.temp_c, b.temp_c)
            np.testing.assert_array_equal(a.wind_ms, b.wind_ms)

    def test_roads_roundtrip_and_validation(self, tmp_path):
        roads = [
            Road("p1", "primary", [GeoPoint(41.0, -73.0), GeoPoint(41.2, -72.8)]),
            Road("s1", "secondary", [GeoPoint(41.5, -72.5), GeoPoint(41.6, -72.4), GeoPoint(41.7, -72.2)]),
        ]
        path = tmp_path / "roads.csv"
        write_roads(str(path), roads)
        back = load_roads(str(path))
        assert [r.road_id for r in back] == ["p1", "s1"]
        assert back[0].road_class == "primary"
        assert back[1].vertices[2] == GeoPoint(41.7, -72.2)

    def test_roads_bad_class(self, tmp_path):
        path = tmp_path / "roads.csv"
        path.write_text("road_id,class,vertex_index,lat,lon\nr,tertiary,0,41.0,-72.0\n")
        with pytest.raises(IngestError, match="unknown road class"):
            load_roads(str(path))

    def test_roads_noncontiguous_vertices(self, tmp_path):
        path = tmp_path / "roads.csv"
        path.write_text(
            "road_id,class,vertex_index,lat,lon\nr,primary,0,41.0,-72.0\nr,primary,2,41.1,-72.1\n"
        )
        with pytest.raises(IngestError, match="contiguous"):
            load_roads(str(path))


TOWERS = [
    TowerSite("t0", GeoPoint(41.0, -73.0)),
    TowerSite("t1", GeoPoint(41.2, -72.8)),
    TowerSite("t2", GeoPoint(41.4, -72.6)),
]


class TestHandoffs:
    def test_small_fixture_resolves(self, tmp_path):
        path = tmp_path / "handoffs.csv"
        path.write_text(
            "device_id,timestamp_utc,tower_id\n"
            "d1,2016-07-18T04:00:00Z,t0\n"
            "d1,2016-07-18T05:30:00Z,t1\n"
            "d2,2016-07-18T04:10:00Z,t2\n"
            "d1,2016-07-18T09:00:00Z,t0\n"
            "d2,2016-07-18T22:00:00Z,t2\n"
        )
        records = list(load_handoffs(str(path), TOWERS))
        assert len(records) == 5
        assert records[0] == HandoffRecord("d1", 1468814400, "t0")
        tower_ids = {t.tower_id for t in TOWERS}
        assert all(r.tower_id in tower_ids for r in records)

    def test_unknown_tower_listed(self, tmp_path):
        path = tmp_path / "handoffs.csv"
        path.write_text(
            "device_id,timestamp_utc,tower_id\nd1,2016-07-18T04:00:00Z,zz9\n"
        )
        with pytest.raises(IngestError, match="zz9"):
            load_handoff_table(str(path), TOWERS)

    def test_out_of_window_records_retained_at_load(self, tmp_path):
        path = tmp_path / "handoffs.csv"
        path.write_text(
            "device_id,timestamp_utc,tower_id\n"
            "d1,2010-01-01T00:00:00Z,t0\n"
            "d1,2016-07-18T05:00:00Z,t1\n"
        )
        table = load_handoff_table(str(path), TOWERS)
        assert len(table) == 2  # the window filter belongs to the mobility stage

    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        n = 1000
        devices = np.array([f"d{i%7}" for i in range(n)], dtype=object)
        stamps = np.sort(rng.integers(1468814400, 1469419200, n)).astype(np.int64)
        tower_ids = np.array([TOWERS[i % 3].tower_id for i in range(n)], dtype=object)
        path = tmp_path / "handoffs.csv"
        write_handoffs(str(path), devices, stamps, tower_ids)
        table = load_handoff_table(str(path), TOWERS)
        assert len(table) == n
        np.testing.assert_array_equal(table.timestamp, stamps)
        got_devices = table.device_ids[table.device_code]
        np.testing.assert_array_equal(got_devices.astype(str), devices.astype(str))

    def test_offset_timestamps_supported(self, tmp_path):
        path = tmp_path / "handoffs.csv"
        path.write_text(
            "device_id,timestamp_utc,tower_id\nd1,2016-07-18T00:00:00-04:00,t0\n"
        )
        table = load_handoff_table(str(path), TOWERS)
        assert table.timestamp[0] == 1468814400


class TestTowers:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "towers.csv"
        write_towers(str(path), TOWERS)
        assert load_towers(str(path)) == TOWERS

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "towers.csv"
        path.write_text("tower_id,lat,lon\nt0,41.0,-72.0\nt0,41.1,-72.1\n")
        with pytest.raises(IngestError, match="duplicate"):
            load_towers(str(path))
