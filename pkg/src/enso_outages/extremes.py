"""Extreme-day detection on daily grids and frequency aggregation.

A day at a cell is extreme when its value crosses that cell's calendar-day
threshold.  Thresholds come from a day-of-year percentile climatology: for
each of the 365 day keys (Feb 29 folds onto Feb 28), pool every sample of
the base period within +/- half_width days of the key (wrapping across the
year boundary) and take a nearest-rank percentile of the pool:

    threshold = sorted_pool[ceil(p/100 * n) - 1]

Heat days exceed the hot percentile of temperature, cold days fall below
the cold percentile, and extreme-precipitation days exceed the hot-side
percentile of precipitation.  Comparisons are strict, so ties with the
threshold never count.  The classified day is part of its own pool; with
the defaults (95th/5th over 24 years, 31-day windows) a pool holds about
744 samples, and an i.i.d. series is flagged close to 5% of the time.
"""

from __future__ import annotations

import datetime as dt
import enum
import math
from dataclasses import dataclass

import numpy as np

from .calendars import (
    DAYS_PER_YEAR_KEYS,
    MonthWindow,
    doy_key,
    doy_window_keys,
)
from .errors import RegionMapError
from .ingest.gridio import DailyGridField, GridVariable
from .ingest.regions import RegionMap
from .timeseries import MonthlyTimeSeries


class EventKind(enum.Enum):
    HEATWAVE = "heatwave"
    COLD_SNAP = "cold_snap"
    EXTREME_PRECIP = "extreme_precip"

    @classmethod
    def parse(cls, token: str) -> "EventKind":
        for kind in cls:
            if kind.value == token.strip().lower():
                return kind
        raise ValueError(f"unknown event kind {token!r}")


KIND_VARIABLE: dict[EventKind, GridVariable] = {
    EventKind.HEATWAVE: GridVariable.T2M,
    EventKind.COLD_SNAP: GridVariable.T2M,
    EventKind.EXTREME_PRECIP: GridVariable.PRECIP,
}

# kind -> (tail, default percentile); "upper" flags values above the
# threshold, "lower" values below it.
KIND_TAIL: dict[EventKind, str] = {
    EventKind.HEATWAVE: "upper",
    EventKind.COLD_SNAP: "lower",
    EventKind.EXTREME_PRECIP: "upper",
}


@dataclass(frozen=True)
class ExtremeConfig:
    window_half_width: int = 15
    hot_percentile: float = 95.0
    cold_percentile: float = 5.0
    precip_percentile: float = 95.0
    precip_wet_days_only: bool = False
    wet_day_min: float = 0.1

    def __post_init__(self) -> None:
        if self.window_half_width < 0:
            raise ValueError("window_half_width must be non-negative")
        for name in ("hot_percentile", "cold_percentile", "precip_percentile"):
            p = getattr(self, name)
            if not 0.0 < p < 100.0:
                raise ValueError(f"{name} must lie strictly between 0 and 100")

    def percentile_for(self, kind: EventKind) -> float:
        if kind is EventKind.HEATWAVE:
            return self.hot_percentile
        if kind is EventKind.COLD_SNAP:
            return self.cold_percentile
        return self.precip_percentile


@dataclass
class ThresholdCalendar:
    """Per-cell thresholds for each of the 365 day-of-year keys."""

    variable: GridVariable
    window_half_width: int
    thresholds: dict[EventKind, np.ndarray]  # (365, nlat, nlon)
    cell_valid: np.ndarray  # (nlat, nlon)


def nearest_rank_index(percentile: float, n: int) -> int:
    """0-based index of the nearest-rank percentile in a sorted pool of n."""
    if n < 1:
        raise ValueError("empty pool")
    rank = math.ceil(percentile / 100.0 * n)
    return min(max(rank, 1), n) - 1


def _doy_keys_of_field(field: DailyGridField) -> np.ndarray:
    return np.array(
        [doy_key(field.t0 + dt.timedelta(days=i)) for i in range(field.ntime)],
        dtype=np.int64,
    )


def build_thresholds(field: DailyGridField, config: ExtremeConfig) -> ThresholdCalendar:
    """Percentile-threshold calendar for every cell of a base-period field.

    The field must span at least two whole years so every day key has a
    multi-sample pool.  Cells with any missing day get NaN thresholds.
    """
    if field.ntime < 2 * DAYS_PER_YEAR_KEYS:
        raise ValueError(
            f"threshold base period must span >= 2 years, got {field.ntime} days"
        )
    keys = _doy_keys_of_field(field)
    times_by_key: list[np.ndarray] = [np.empty(0, dtype=np.int64)] * (DAYS_PER_YEAR_KEYS + 1)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    bounds = np.searchsorted(sorted_keys, np.arange(1, DAYS_PER_YEAR_KEYS + 2))
    for key in range(1, DAYS_PER_YEAR_KEYS + 1):
        times_by_key[key] = order[bounds[key - 1] : bounds[key]]

    if field.variable is GridVariable.T2M:
        kinds = [EventKind.HEATWAVE, EventKind.COLD_SNAP]
    else:
        kinds = [EventKind.EXTREME_PRECIP]

    nlat, nlon = field.nlat, field.nlon
    cell_valid = field.cell_valid()
    flat = field.values.reshape(field.ntime, nlat * nlon)
    out = {kind: np.full((DAYS_PER_YEAR_KEYS, nlat, nlon), np.nan) for kind in kinds}

    wet_only = field.variable is GridVariable.PRECIP and config.precip_wet_days_only
    for key in range(1, DAYS_PER_YEAR_KEYS + 1):
        pool_times = np.concatenate(
            [times_by_key[k] for k in doy_window_keys(key, config.window_half_width)]
        )
        pool = flat[pool_times, :]
        if wet_only:
            pool = np.where(pool > config.wet_day_min, pool, np.nan)
            pool_sorted = np.sort(pool, axis=0)  # NaN sorts last
            n_valid = np.sum(~np.isnan(pool), axis=0)
            for kind in kinds:
                p = config.percentile_for(kind)
                thr = np.full(nlat * nlon, np.nan)
                has = n_valid > 0
                ranks = np.array(
                    [nearest_rank_index(p, n) if n > 0 else 0 for n in n_valid]
                )
                cols = np.flatnonzero(has)
                thr[cols] = pool_sorted[ranks[cols], cols]
                out[kind][key - 1] = thr.reshape(nlat, nlon)
        else:
            n = pool.shape[0]
            for kind in kinds:
                idx = nearest_rank_index(config.percentile_for(kind), n)
                part = np.partition(pool, idx, axis=0)
                out[kind][key - 1] = part[idx].reshape(nlat, nlon)

    for kind in kinds:
        out[kind][:, ~cell_valid] = np.nan
    return ThresholdCalendar(
        variable=field.variable,
        window_half_width=config.window_half_width,
        thresholds=out,
        cell_valid=cell_valid,
    )


@dataclass
class ExtremeDayMask:
    """Boolean (time, lat, lon) mask of extreme days for one event kind."""

    kind: EventKind
    t0: dt.date
    mask: np.ndarray
    cell_valid: np.ndarray

    @property
    def ntime(self) -> int:
        return self.mask.shape[0]


def classify_days(
    field: DailyGridField, calendar: ThresholdCalendar, kind: EventKind
) -> ExtremeDayMask:
    """Flag every (day, cell) crossing its day-of-year threshold.

    Strict comparisons; missing values and invalid cells never flag.
    """
    if kind not in calendar.thresholds:
        raise ValueError(f"threshold calendar has no {kind.value} thresholds")
    if field.variable is not calendar.variable:
        raise ValueError(
            f"variable mismatch: field is {field.variable.value}, "
            f"calendar is {calendar.variable.value}"
        )
    keys = _doy_keys_of_field(field)
    thr = calendar.thresholds[kind]
    mask = np.zeros(field.values.shape, dtype=bool)
    upper = KIND_TAIL[kind] == "upper"
    chunk = 512
    with np.errstate(invalid="ignore"):
        for start in range(0, field.ntime, chunk):
            stop = min(start + chunk, field.ntime)
            day_thr = thr[keys[start:stop] - 1]
            vals = field.values[start:stop]
            if upper:
                mask[start:stop] = vals > day_thr
            else:
                mask[start:stop] = vals < day_thr
    mask &= calendar.cell_valid[None, :, :]
    return ExtremeDayMask(kind=kind, t0=field.t0, mask=mask, cell_valid=calendar.cell_valid)


@dataclass
class ExtremeFrequencySeries:
    """Monthly extreme-day counts per cell, with the grid's geometry."""

    kind: EventKind
    start: tuple[int, int]
    counts: np.ndarray  # (n_months, nlat, nlon) float64
    cell_valid: np.ndarray
    lats: np.ndarray
    lons: np.ndarray

    @property
    def n_months(self) -> int:
        return self.counts.shape[0]

    def window(self) -> MonthWindow:
        from .calendars import add_months

        end = add_months(self.start[0], self.start[1], self.n_months - 1)
        return MonthWindow(self.start[0], self.start[1], end[0], end[1])

    def cell_series(self, i: int, j: int) -> MonthlyTimeSeries:
        return MonthlyTimeSeries(self.counts[:, i, j].copy(), self.start)


def monthly_frequency(
    daymask: ExtremeDayMask, lats: np.ndarray, lons: np.ndarray
) -> ExtremeFrequencySeries:
    """Count flagged days per calendar month at every cell.

    Months cut by the field's edges are counted over the days present.
    """
    first = daymask.t0
    n_days = daymask.ntime
    month_index = np.empty(n_days, dtype=np.int64)
    start = (first.year, first.month)
    for i in range(n_days):
        d = first + dt.timedelta(days=i)
        month_index[i] = (d.year - start[0]) * 12 + (d.month - start[1])
    n_months = int(month_index[-1]) + 1
    counts = np.zeros((n_months, daymask.mask.shape[1], daymask.mask.shape[2]))
    boundaries = np.flatnonzero(np.diff(month_index)) + 1
    segments = np.split(np.arange(n_days), boundaries)
    for seg in segments:
        counts[month_index[seg[0]]] = daymask.mask[seg].sum(axis=0)
    counts[:, ~daymask.cell_valid] = np.nan
    return ExtremeFrequencySeries(
        kind=daymask.kind,
        start=start,
        counts=counts,
        cell_valid=daymask.cell_valid.copy(),
        lats=np.asarray(lats, dtype=np.float64),
        lons=np.asarray(lons, dtype=np.float64),
    )


def regional_frequency(
    freq: ExtremeFrequencySeries,
    region_map: RegionMap,
    region: str,
    how: str = "mean",
) -> MonthlyTimeSeries:
    """Aggregate per-cell monthly counts over one region's valid cells.

    how: "mean" (plain average), "area" (cos-latitude weighted mean), or
    "max" (region-wide maximum).
    """
    if how not in ("mean", "area", "max"):
        raise ValueError(f"unknown aggregation {how!r}")
    idx_grid = region_map.region_index_grid(freq.lats, freq.lons)
    try:
        want = region_map.region_order.index(region)
    except ValueError:
        raise RegionMapError(f"unknown region id {region!r}") from None
    cells = (idx_grid == want) & freq.cell_valid
    if not cells.any():
        raise RegionMapError(f"region {region} covers no valid grid cells")
    block = freq.counts[:, cells]
    if how == "max":
        values = block.max(axis=1)
    elif how == "area":
        weights = np.cos(np.deg2rad(freq.lats))[:, None] * np.ones_like(freq.lons)[None, :]
        w = weights[cells]
        values = block @ (w / w.sum())
    else:
        values = block.mean(axis=1)
    return MonthlyTimeSeries(values, freq.start)


def regional_frequency_table(
    freq: ExtremeFrequencySeries, region_map: RegionMap, how: str = "mean"
) -> dict[str, MonthlyTimeSeries]:
    """regional_frequency for every region that has valid cells."""
    out: dict[str, MonthlyTimeSeries] = {}
    for region in region_map.region_order:
        try:
            out[region] = regional_frequency(freq, region_map, region, how=how)
        except RegionMapError:
            continue
    return out
