"""Hand-off streams -> per-device dwell segments, night-time local areas,
and network statistics.

Dwell attribution rule (the key modeling assumption): a device stays at the
tower of its most recent hand-off until the next hand-off; the final segment
runs to the end of the study window. Time before a device's first hand-off
is unassigned. Records sharing an exact timestamp collapse to the last one
in file order.

The store is columnar (CSR-style per-device slices over flat arrays) so a
week of ~50M hand-offs fits comfortably in memory and every downstream pass
is a vectorized sweep.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .geo import haversine_m_arrays
from .ingest import HandoffRecord, HandoffTable, TowerSite
from .timebase import StudyWindow


class MobilityError(ValueError):
    pass


@dataclass(frozen=True)
class DwellSegment:
    tower_id: str
    start: int  # UTC epoch seconds, inclusive
    end: int  # exclusive

    def __post_init__(self) -> None:
        if self.end <= self.start:
            raise MobilityError(f"empty dwell segment at {self.start}")

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass
class Trajectory:
    device_id: str
    segments: list[DwellSegment]


@dataclass
class NightProfile:
    device_id: str
    night_tower_id: str | None  # None: no night dwell at all
    night_seconds: int  # dwell at the winning tower
    seconds_by_tower: dict[str, int]


@dataclass
class TrajectoryStore:
    """All device trajectories over one study window, columnar.

    Device d owns segments seg_ptr[d]:seg_ptr[d+1]; segment i dwells at
    towers[seg_tower[i]] during [seg_start[i], seg_end[i]). handoff_counts
    holds the raw (pre-collapse) hand-off count per device.
    """

    device_ids: np.ndarray  # (D,) str
    seg_ptr: np.ndarray  # (D+1,) int64
    seg_tower: np.ndarray  # (N,) int32
    seg_start: np.ndarray  # (N,) int64
    seg_end: np.ndarray  # (N,) int64
    handoff_counts: np.ndarray  # (D,) int64
    towers: list[TowerSite]
    window: StudyWindow
    n_dropped_devices: int = 0

    @property
    def n_devices(self) -> int:
        return len(self.device_ids)

    @property
    def n_segments(self) -> int:
        return len(self.seg_tower)

    def dwell_totals(self) -> np.ndarray:
        """Total assigned dwell per device (== window end - first hand-off)."""
        return np.add.reduceat(
            self.seg_end - self.seg_start, self.seg_ptr[:-1]
        ) if self.n_segments else np.zeros(0, dtype=np.int64)

    def trajectory(self, index: int) -> Trajectory:
        lo, hi = self.seg_ptr[index], self.seg_ptr[index + 1]
        tower_ids = [t.tower_id for t in self.towers]
        return Trajectory(
            str(self.device_ids[index]),
            [
                DwellSegment(tower_ids[self.seg_tower[i]], int(self.seg_start[i]), int(self.seg_end[i]))
                for i in range(lo, hi)
            ],
        )

    def trajectories(self) -> Iterator[Trajectory]:
        for d in range(self.n_devices):
            yield self.trajectory(d)


def _records_to_arrays(
    records: Iterable[HandoffRecord], towers: list[TowerSite]
) -> HandoffTable:
    tower_code = {t.tower_id: i for i, t in enumerate(towers)}
    device_code: dict[str, int] = {}
    devs: list[int] = []
    stamps: list[int] = []
    tows: list[int] = []
    unknown: set[str] = set()
    for rec in records:
        code = tower_code.get(rec.tower_id)
        if code is None:
            unknown.add(rec.tower_id)
            continue
        devs.append(device_code.setdefault(rec.device_id, len(device_code)))
        stamps.append(rec.timestamp)
        tows.append(code)
    if unknown:
        raise MobilityError(f"hand-offs reference unknown towers: {', '.join(sorted(unknown)[:20])}")
    return HandoffTable(
        np.array(list(device_code), dtype=object),
        np.array(devs, dtype=np.int32),
        np.array(stamps, dtype=np.int64),
        np.array(tows, dtype=np.int32),
        towers,
    )


def build_trajectories(
    records: HandoffTable | Iterable[HandoffRecord],
    window: StudyWindow,
    towers: list[TowerSite] | None = None,
) -> TrajectoryStore:
    """Sort, filter, and segment the hand-off stream.

    Devices with any hand-off outside [window.start, window.end) are dropped
    entirely (the study population is devices fully observed inside the
    window). Exact-timestamp ties keep the last record in file order.
    `towers` is required only when feeding a plain record iterable.
    """
    if isinstance(records, HandoffTable):
        table = records
    else:
        if towers is None:
            raise MobilityError("towers are required when records are not a HandoffTable")
        table = _records_to_arrays(records, towers)
    dev = table.device_code
    ts = table.timestamp
    tow = table.tower_code

    outside = (ts < window.start) | (ts >= window.end)
    bad_devices = np.unique(dev[outside])
    keep_mask = ~np.isin(dev, bad_devices)
    dev = dev[keep_mask]
    ts = ts[keep_mask]
    tow = tow[keep_mask]

    if dev.size == 0:
        return TrajectoryStore(
            np.array([], dtype=object),
            np.zeros(1, dtype=np.int64),
            np.array([], dtype=np.int32),
            np.array([], dtype=np.int64),
            np.array([], dtype=np.int64),
            np.array([], dtype=np.int64),
            list(table.towers),
            window,
            n_dropped_devices=len(bad_devices),
        )

    # Stable sort: primary device, secondary timestamp; ties keep file order.
    order = np.lexsort((ts, dev))
    dev = dev[order]
    ts = ts[order]
    tow = tow[order]

    # Raw hand-off counts per surviving device (before tie collapse).
    surviving = np.unique(dev)
    raw_counts = np.bincount(dev, minlength=int(table.n_devices) or 1)[surviving]

    # Collapse exact-timestamp ties: keep the last record of each (dev, ts) run.
    is_last = np.empty(len(dev), dtype=bool)
    is_last[-1] = True
    is_last[:-1] = (dev[:-1] != dev[1:]) | (ts[:-1] != ts[1:])
    dev = dev[is_last]
    ts = ts[is_last]
    tow = tow[is_last]

    # Per-device slices; device order follows first appearance in the file.
    counts = np.bincount(dev, minlength=int(table.n_devices) or 1)[surviving]
    ptr = np.zeros(len(surviving) + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])

    seg_end = np.empty_like(ts)
    seg_end[:-1] = ts[1:]
    seg_end[ptr[1:] - 1] = window.end

    return TrajectoryStore(
        device_ids=table.device_ids[surviving],
        seg_ptr=ptr,
        seg_tower=tow.astype(np.int32),
        seg_start=ts,
        seg_end=seg_end,
        handoff_counts=raw_counts.astype(np.int64),
        towers=list(table.towers),
        window=window,
        n_dropped_devices=len(bad_devices),
    )


def from_records(
    records: Iterable[HandoffRecord], towers: list[TowerSite], window: StudyWindow
) -> TrajectoryStore:
    """Convenience path for record iterables (tests, small files)."""
    return build_trajectories(records, window, towers=towers)


def night_seconds_by_device_tower(
    store: TrajectoryStore,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Aggregate night dwell: parallel arrays (device_index, tower_code, seconds)."""
    secs = store.window.night_overlap_seconds(store.seg_start, store.seg_end)
    dev_of_seg = np.repeat(
        np.arange(store.n_devices, dtype=np.int64), np.diff(store.seg_ptr)
    )
    nz = secs > 0
    if not nz.any():
        return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int64))
    key = dev_of_seg[nz] * len(store.towers) + store.seg_tower[nz]
    uniq, inv = np.unique(key, return_inverse=True)
    totals = np.bincount(inv, weights=secs[nz]).astype(np.int64)
    return uniq // len(store.towers), uniq % len(store.towers), totals


def night_profiles(store: TrajectoryStore) -> tuple[np.ndarray, np.ndarray]:
    """Per-device night tower and dwell seconds.

    Returns (night_tower_code, night_seconds); code -1 flags devices with no
    night dwell at all (excluded from static-scenario analysis). Ties on
    dwell go to the lexicographically smallest tower_id.
    """
    dev_idx, tower_code, totals = night_seconds_by_device_tower(store)
    winner = np.full(store.n_devices, -1, dtype=np.int64)
    winner_secs = np.zeros(store.n_devices, dtype=np.int64)
    if dev_idx.size:
        tower_ids = np.array([t.tower_id for t in store.towers], dtype=object)
        lex_rank = np.argsort(np.argsort(tower_ids, kind="stable"), kind="stable")
        order = np.lexsort((lex_rank[tower_code], -totals, dev_idx))
        first = np.ones(len(order), dtype=bool)
        sorted_dev = dev_idx[order]
        first[1:] = sorted_dev[1:] != sorted_dev[:-1]
        rows = order[first]
        winner[dev_idx[rows]] = tower_code[rows]
        winner_secs[dev_idx[rows]] = totals[rows]
    return winner, winner_secs


def night_profile(traj: Trajectory, window: StudyWindow) -> NightProfile:
    """Single-trajectory night profile (reference API over the same math)."""
    starts = np.array([s.start for s in traj.segments], dtype=np.int64)
    ends = np.array([s.end for s in traj.segments], dtype=np.int64)
    secs = window.night_overlap_seconds(starts, ends)
    by_tower: dict[str, int] = {}
    for seg, s in zip(traj.segments, secs):
        if s > 0:
            by_tower[seg.tower_id] = by_tower.get(seg.tower_id, 0) + int(s)
    if not by_tower:
        return NightProfile(traj.device_id, None, 0, {})
    best = min(by_tower.items(), key=lambda kv: (-kv[1], kv[0]))
    return NightProfile(traj.device_id, best[0], best[1], by_tower)


def nearest_tower_distances_m(towers: list[TowerSite], block: int = 512) -> np.ndarray:
    """Exact haversine distance from each tower to its nearest other tower."""
    m = len(towers)
    if m < 2:
        raise MobilityError("need at least 2 towers for nearest-tower distances")
    lat = np.array([t.location.lat for t in towers])
    lon = np.array([t.location.lon for t in towers])
    out = np.empty(m)
    for lo in range(0, m, block):
        hi = min(lo + block, m)
        d = haversine_m_arrays(lat[lo:hi, None], lon[lo:hi, None], lat[None, :], lon[None, :])
        d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        out[lo:hi] = d.min(axis=1)
    return out


@dataclass
class NetworkStats:
    nearest_distance_m: np.ndarray  # per tower
    handoffs_per_device: np.ndarray  # per device

    def distance_quartiles(self) -> tuple[float, float, float]:
        q = np.quantile(self.nearest_distance_m, [0.25, 0.5, 0.75])
        return float(q[0]), float(q[1]), float(q[2])


def network_stats(towers: list[TowerSite], store: TrajectoryStore) -> NetworkStats:
    if store.n_devices == 0:
        raise MobilityError("no devices in trajectory store")
    return NetworkStats(nearest_tower_distances_m(towers), store.handoff_counts.copy())


# --- persistence -----------------------------------------------------------

_STORE_FILES = ("device_ids", "seg_ptr", "seg_tower", "seg_start", "seg_end", "handoff_counts")


def save_store(directory: str, store: TrajectoryStore) -> None:
    """Write the columnar store as byte-deterministic .npy files."""
    os.makedirs(directory, exist_ok=True)
    arrays = {
        "device_ids": store.device_ids.astype("U"),
        "seg_ptr": store.seg_ptr,
        "seg_tower": store.seg_tower,
        "seg_start": store.seg_start,
        "seg_end": store.seg_end,
        "handoff_counts": store.handoff_counts,
    }
    for name in _STORE_FILES:
        np.save(os.path.join(directory, name + ".npy"), arrays[name])


def load_store(directory: str, towers: list[TowerSite], window: StudyWindow) -> TrajectoryStore:
    arrays = {}
    for name in _STORE_FILES:
        path = os.path.join(directory, name + ".npy")
        if not os.path.exists(path):
            raise MobilityError(f"trajectory store incomplete: missing {path}")
        arrays[name] = np.load(path, allow_pickle=False)
    return TrajectoryStore(
        device_ids=arrays["device_ids"].astype(object),
        seg_ptr=arrays["seg_ptr"],
        seg_tower=arrays["seg_tower"],
        seg_start=arrays["seg_start"],
        seg_end=arrays["seg_end"],
        handoff_counts=arrays["handoff_counts"],
        towers=towers,
        window=window,
    )
