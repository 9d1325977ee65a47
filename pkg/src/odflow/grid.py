"""Uniform time grid partitioned into calendar days."""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass

MINUTES_PER_DAY = 1440


@dataclass(frozen=True)
class TimeGrid:
    """Uniform intervals covering whole days.

    Interval indices run 0..n_intervals-1 across all days in order; each day
    contributes exactly ``intervals_per_day`` of them.
    """

    interval_minutes: int
    day_labels: tuple[_dt.date, ...]

    def __post_init__(self):
        if self.interval_minutes <= 0 or MINUTES_PER_DAY % self.interval_minutes != 0:
            raise ValueError(
                f"interval_minutes must divide {MINUTES_PER_DAY}, got {self.interval_minutes}"
            )
        if not self.day_labels:
            raise ValueError("grid needs at least one day")
        if len(set(self.day_labels)) != len(self.day_labels):
            raise ValueError("duplicate day labels")
        object.__setattr__(self, "day_labels", tuple(self.day_labels))

    @property
    def intervals_per_day(self) -> int:
        return MINUTES_PER_DAY // self.interval_minutes

    @property
    def n_days(self) -> int:
        return len(self.day_labels)

    @property
    def n_intervals(self) -> int:
        return self.intervals_per_day * self.n_days

    @property
    def total_minutes(self) -> float:
        return float(self.n_intervals * self.interval_minutes)

    def day_of(self, t: int) -> int:
        """Day index owning interval ``t``."""
        if not 0 <= t < self.n_intervals:
            raise IndexError(f"interval {t} outside grid of {self.n_intervals}")
        return t // self.intervals_per_day

    def day_intervals(self, day: int) -> range:
        """Interval indices belonging to day ``day``."""
        if not 0 <= day < self.n_days:
            raise IndexError(f"day {day} outside grid of {self.n_days}")
        start = day * self.intervals_per_day
        return range(start, start + self.intervals_per_day)

    def index_of(self, timestamp: _dt.datetime) -> int | None:
        """Interval index for a timestamp, or None for days not in the grid."""
        try:
            day = self.day_labels.index(timestamp.date())
        except ValueError:
            return None
        minutes = timestamp.hour * 60 + timestamp.minute
        return day * self.intervals_per_day + minutes // self.interval_minutes

    def timestamp_of(self, t: int) -> _dt.datetime:
        """Start-of-interval timestamp for interval ``t``."""
        day = self.day_of(t)
        minutes = (t % self.intervals_per_day) * self.interval_minutes
        return _dt.datetime.combine(self.day_labels[day], _dt.time()) + _dt.timedelta(minutes=minutes)

    def within_day_index(self, hour: int, minute: int = 0) -> int:
        return (hour * 60 + minute) // self.interval_minutes


def make_grid(interval_minutes: int, start_day: _dt.date | str, n_days: int) -> TimeGrid:
    """Grid over ``n_days`` consecutive days starting at ``start_day``."""
    if isinstance(start_day, str):
        start_day = _dt.date.fromisoformat(start_day)
    days = tuple(start_day + _dt.timedelta(days=i) for i in range(n_days))
    return TimeGrid(interval_minutes=interval_minutes, day_labels=days)
