"""Study clock: UTC epoch-second timestamps, hour grid, and the night window.

All timestamps are normalized to UTC integer seconds at ingest. Local-time
semantics (the study week boundary, the nightly 20:00-06:30 window, day
labels) are resolved exactly once here through zoneinfo, so downstream
arithmetic is plain integer interval math.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from zoneinfo import ZoneInfo

import numpy as np

HOUR = 3600
DAY = 86400


def parse_rfc3339(text: str) -> int:
    """RFC 3339 timestamp -> UTC epoch seconds."""
    t = text.strip()
    if t.endswith(("Z", "z")):
        t = t[:-1] + "+00:00"
    dt = datetime.fromisoformat(t)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp lacks a UTC offset: {text!r}")
    return int(dt.timestamp())


def format_rfc3339(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_rfc3339_array(values: np.ndarray) -> np.ndarray:
    """Vectorized RFC 3339 -> int64 epoch seconds for UTC ('Z') timestamps.

    Falls back to the scalar parser for entries carrying numeric offsets.
    """
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # numpy's tz-parsing deprecation
            parsed = np.asarray(values, dtype="datetime64[s]")
        return parsed.astype(np.int64)
    except ValueError:
        return np.array([parse_rfc3339(str(v)) for v in values], dtype=np.int64)


def local_to_utc(local_iso: str, tz: str) -> int:
    """Naive local ISO datetime + IANA zone -> UTC epoch seconds."""
    dt = datetime.fromisoformat(local_iso)
    if dt.tzinfo is not None:
        return int(dt.timestamp())
    return int(dt.replace(tzinfo=ZoneInfo(tz)).timestamp())


def _parse_clock(text: str) -> int:
    """'HH:MM' -> minutes since local midnight."""
    hh, mm = text.split(":")
    minutes = int(hh) * 60 + int(mm)
    if not 0 <= minutes < 24 * 60:
        raise ValueError(f"clock time out of range: {text!r}")
    return minutes


@dataclass(frozen=True)
class StudyWindow:
    """Half-open [start, end) study interval on the UTC second line.

    The window must span a whole number of hours. Hour h of the study clock
    is [start + 3600h, start + 3600(h+1)); day d is the 24-hour block
    starting at start + 86400d, labelled with its local calendar date.
    """

    start: int
    end: int
    tz: str
    night_start: int = 20 * 60  # minutes since local midnight
    night_end: int = 6 * 60 + 30
    _night_bounds: tuple[tuple[int, ...], tuple[int, ...]] = field(
        init=False, repr=False, compare=False, default=((), ())
    )

    def __post_init__(self) -> None:
        if self.end <= self.start:
            raise ValueError("window end must be after start")
        if (self.end - self.start) % HOUR != 0:
            raise ValueError("window must span a whole number of hours")
        starts, ends = self._build_night_intervals()
        object.__setattr__(self, "_night_bounds", (tuple(starts), tuple(ends)))

    @classmethod
    def from_local(
        cls,
        start_local: str,
        end_local: str,
        tz: str,
        night_start: str = "20:00",
        night_end: str = "06:30",
    ) -> "StudyWindow":
        return cls(
            start=local_to_utc(start_local, tz),
            end=local_to_utc(end_local, tz),
            tz=tz,
            night_start=_parse_clock(night_start),
            night_end=_parse_clock(night_end),
        )

    @property
    def n_hours(self) -> int:
        return (self.end - self.start) // HOUR

    @property
    def n_days(self) -> int:
        return max(1, -(-(self.end - self.start) // DAY))

    def day_dates(self) -> list[str]:
        """Local calendar date (ISO) labelling each 24-hour study day."""
        zone = ZoneInfo(self.tz)
        return [
            datetime.fromtimestamp(self.start + d * DAY, tz=zone).date().isoformat()
            for d in range(self.n_days)
        ]

    def hour_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        starts = self.start + HOUR * np.arange(self.n_hours, dtype=np.int64)
        return starts, starts + HOUR

    def _build_night_intervals(self) -> tuple[list[int], list[int]]:
        """UTC [start, end) intervals of the nightly window clipped to the study."""
        zone = ZoneInfo(self.tz)
        first = datetime.fromtimestamp(self.start, tz=zone).date() - timedelta(days=1)
        last = datetime.fromtimestamp(self.end, tz=zone).date()
        starts: list[int] = []
        ends: list[int] = []
        day = first
        while day <= last:
            night_on = datetime.combine(day, datetime.min.time(), tzinfo=zone) + timedelta(
                minutes=self.night_start
            )
            off_day = day + timedelta(days=1) if self.night_end <= self.night_start else day
            night_off = datetime.combine(off_day, datetime.min.time(), tzinfo=zone) + timedelta(
                minutes=self.night_end
            )
            s = max(int(night_on.timestamp()), self.start)
            e = min(int(night_off.timestamp()), self.end)
            if e > s:
                starts.append(s)
                ends.append(e)
            day += timedelta(days=1)
        return starts, ends

    def night_intervals(self) -> list[tuple[int, int]]:
        starts, ends = self._night_bounds
        return list(zip(starts, ends))

    def night_overlap_seconds(self, seg_start: np.ndarray, seg_end: np.ndarray) -> np.ndarray:
        """Exact seconds each [start, end) segment spends inside the night window."""
        starts, ends = self._night_bounds
        s = np.asarray(starts, dtype=np.int64)
        e = np.asarray(ends, dtype=np.int64)
        if s.size == 0:
            return np.zeros(np.shape(seg_start), dtype=np.int64)
        lengths = e - s
        cum = np.concatenate([[0], np.cumsum(lengths)])

        def accum(t: np.ndarray) -> np.ndarray:
            # total night seconds before time t
            t = np.asarray(t, dtype=np.int64)
            i = np.searchsorted(s, t, side="right") - 1
            base = cum[np.maximum(i, 0)]
            partial = np.clip(t - s[np.maximum(i, 0)], 0, lengths[np.maximum(i, 0)])
            return np.where(i >= 0, base + partial, 0)

        return accum(seg_end) - accum(seg_start)
