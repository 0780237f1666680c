"""Calendar arithmetic shared by the ingest, time-series, and extremes layers.

All monthly bookkeeping runs on (year, month) pairs and inclusive month
windows; daily bookkeeping runs on ``datetime.date`` plus a fixed 365-day
day-of-year key in which Feb 29 shares key 59 with Feb 28.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Iterator

EPOCH = dt.date(1970, 1, 1)

SEASON_MONTHS: dict[str, tuple[int, int, int]] = {
    "MAM": (3, 4, 5),
    "JJA": (6, 7, 8),
    "SON": (9, 10, 11),
    "DJF": (12, 1, 2),
}

# How many months a winter-peaking climate index is read before each season.
SEASON_LAG_MONTHS: dict[str, int] = {"MAM": 3, "JJA": 6, "SON": 9, "DJF": 0}

SEASON_NAMES = tuple(SEASON_MONTHS)

DAYS_PER_YEAR_KEYS = 365


def season_of_month(month: int) -> str:
    for name, months in SEASON_MONTHS.items():
        if month in months:
            return name
    raise ValueError(f"month out of range: {month!r}")


def add_months(year: int, month: int, delta: int) -> tuple[int, int]:
    idx = year * 12 + (month - 1) + delta
    return idx // 12, idx % 12 + 1


def months_between(start: tuple[int, int], end: tuple[int, int]) -> int:
    """Signed count of month steps from start to end."""
    return (end[0] - start[0]) * 12 + (end[1] - start[1])


def epoch_day(d: dt.date) -> int:
    return d.toordinal() - EPOCH.toordinal()


def date_from_epoch_day(day: int) -> dt.date:
    return dt.date.fromordinal(EPOCH.toordinal() + day)


def is_leap_year(year: int) -> bool:
    return year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)


def days_in_month(year: int, month: int) -> int:
    if month == 12:
        return 31
    return (dt.date(year, month + 1, 1) - dt.date(year, month, 1)).days


def doy_key(d: dt.date) -> int:
    """Day-of-year key in 1..365; Feb 29 maps onto Feb 28's key (59)."""
    doy = d.timetuple().tm_yday
    if is_leap_year(d.year) and doy >= 60:
        return doy - 1
    return doy


def doy_window_keys(key: int, half_width: int) -> list[int]:
    """Keys within +/- half_width of ``key``, wrapping across the year end."""
    if not 1 <= key <= DAYS_PER_YEAR_KEYS:
        raise ValueError(f"day-of-year key out of range: {key}")
    span = 2 * half_width + 1
    if span >= DAYS_PER_YEAR_KEYS:
        return list(range(1, DAYS_PER_YEAR_KEYS + 1))
    return [(key - 1 + off) % DAYS_PER_YEAR_KEYS + 1 for off in range(-half_width, half_width + 1)]


@dataclass(frozen=True)
class MonthWindow:
    """Inclusive range of calendar months."""

    start_year: int
    start_month: int
    end_year: int
    end_month: int

    def __post_init__(self) -> None:
        for m in (self.start_month, self.end_month):
            if not 1 <= m <= 12:
                raise ValueError(f"month out of range: {m}")
        if self.n_months < 1:
            raise ValueError("window end precedes its start")

    @property
    def n_months(self) -> int:
        return months_between((self.start_year, self.start_month), (self.end_year, self.end_month)) + 1

    @property
    def start(self) -> tuple[int, int]:
        return self.start_year, self.start_month

    @property
    def end(self) -> tuple[int, int]:
        return self.end_year, self.end_month

    def contains(self, year: int, month: int) -> bool:
        return 0 <= months_between(self.start, (year, month)) <= self.n_months - 1

    def index_of(self, year: int, month: int) -> int:
        off = months_between(self.start, (year, month))
        if not 0 <= off < self.n_months:
            raise ValueError(f"{year}-{month:02d} outside window {self}")
        return off

    def year_month(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.n_months:
            raise ValueError(f"index {index} outside window of {self.n_months} months")
        return add_months(self.start_year, self.start_month, index)

    def iter_months(self) -> Iterator[tuple[int, int]]:
        for i in range(self.n_months):
            yield self.year_month(i)

    def years(self) -> range:
        return range(self.start_year, self.end_year + 1)

    def __str__(self) -> str:
        return f"{self.start_year}-{self.start_month:02d}..{self.end_year}-{self.end_month:02d}"


DEFAULT_STUDY_WINDOW = MonthWindow(2000, 3, 2023, 3)


def parse_year_month(text: str) -> tuple[int, int]:
    """Parse 'YYYY-MM' (also accepts 'YYYY/MM' and 'YYYY-MM-DD')."""
    token = text.strip().replace("/", "-")
    parts = token.split("-")
    if len(parts) not in (2, 3):
        raise ValueError(f"cannot parse year-month: {text!r}")
    year, month = int(parts[0]), int(parts[1])
    if not 1 <= month <= 12:
        raise ValueError(f"cannot parse year-month: {text!r}")
    return year, month


def format_year_month(year: int, month: int) -> str:
    return f"{year:04d}-{month:02d}"
