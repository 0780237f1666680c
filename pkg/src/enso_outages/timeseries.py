"""Monthly time-series preprocessing: detrend, anomaly, 3-month smoothing.

Every monthly series passes through the same pipeline before any
correlation or composite analysis:

    raw -> detrended -> anomaly -> smoothed

The linear trend is removed first with an ordinary least-squares fit
against the sample index t = 1..T.  Anomalies then subtract each calendar
month's climatological mean (computed over a configurable span of years).
Finally a centered 3-month running mean suppresses sub-seasonal noise;
the first and last entries have no complete 3-month window and are marked
invalid rather than padded.

Each transform validates the stage of its input so the steps cannot be
applied out of order, and returns a new series (inputs are never mutated).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .calendars import MonthWindow, add_months, format_year_month, parse_year_month


class Stage(enum.Enum):
    RAW = "raw"
    DETRENDED = "detrended"
    ANOMALY = "anomaly"
    SMOOTHED = "smoothed"


@dataclass
class MonthlyTimeSeries:
    """A contiguous monthly series with a processing-stage tag.

    values      float array, one entry per month, no gaps
    start       (year, month) of the first entry
    stage       where in the preprocessing pipeline the values sit
    valid_mask  False where an entry carries no usable value (smoothing
                endpoints); invalid entries hold NaN
    """

    values: np.ndarray
    start: tuple[int, int]
    stage: Stage = Stage.RAW
    valid_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("a monthly series must be one-dimensional")
        year, month = self.start
        if not 1 <= month <= 12:
            raise ValueError(f"month out of range: {month}")
        self.start = (int(year), int(month))
        if self.valid_mask is None:
            self.valid_mask = np.ones(self.values.shape, dtype=bool)
        else:
            self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
            if self.valid_mask.shape != self.values.shape:
                raise ValueError("valid_mask shape mismatch")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def end(self) -> tuple[int, int]:
        return add_months(self.start[0], self.start[1], len(self) - 1)

    def window(self) -> MonthWindow:
        ey, em = self.end
        return MonthWindow(self.start[0], self.start[1], ey, em)

    def year_month(self, index: int) -> tuple[int, int]:
        return add_months(self.start[0], self.start[1], index)

    def index_of(self, year: int, month: int) -> int:
        off = (year - self.start[0]) * 12 + (month - self.start[1])
        if not 0 <= off < len(self):
            raise ValueError(f"{year}-{month:02d} outside series span")
        return off

    def month_numbers(self) -> np.ndarray:
        first = self.start[1] - 1
        return (np.arange(len(self)) + first) % 12 + 1

    def year_numbers(self) -> np.ndarray:
        first = self.start[0] * 12 + self.start[1] - 1
        return (np.arange(len(self)) + first) // 12


@dataclass(frozen=True)
class LinearTrend:
    """OLS fit x(t) = intercept + slope * t against t = 1..T."""

    intercept: float
    slope: float
    residual_variance: float

    def evaluate(self, t: np.ndarray | float) -> np.ndarray | float:
        return self.intercept + self.slope * np.asarray(t, dtype=np.float64)


@dataclass(frozen=True)
class SubsetCondition:
    """Predicate over (value, month, year) used to pick analysis samples."""

    predicate: Callable[[float, int, int], bool]
    description: str

    def __call__(self, value: float, month: int, year: int) -> bool:
        return bool(self.predicate(value, month, year))


def _require_stage(x: MonthlyTimeSeries, stage: Stage, op: str) -> None:
    if x.stage is not stage:
        raise ValueError(f"{op} expects a {stage.value} series, got {x.stage.value}")


def detrend(x: MonthlyTimeSeries) -> tuple[LinearTrend, MonthlyTimeSeries]:
    """Remove the OLS straight line fitted against the 1-based sample index.

    Residuals sum to zero and are uncorrelated with the index, both to
    rounding.  Requires a raw series of length >= 3 with no missing values.
    """
    _require_stage(x, Stage.RAW, "detrend")
    T = len(x)
    if T < 3:
        raise ValueError(f"detrend needs at least 3 samples, got {T}")
    if not np.all(x.valid_mask) or not np.all(np.isfinite(x.values)):
        raise ValueError("detrend requires a series with no missing values")
    t = np.arange(1, T + 1, dtype=np.float64)
    t_mean = t.mean()
    v_mean = x.values.mean()
    t_dev = t - t_mean
    sxx = float(t_dev @ t_dev)
    slope = float(t_dev @ (x.values - v_mean)) / sxx
    intercept = v_mean - slope * t_mean
    residuals = x.values - (intercept + slope * t)
    resid_var = float(residuals @ residuals) / (T - 2)
    trend = LinearTrend(intercept=intercept, slope=slope, residual_variance=resid_var)
    return trend, replace(x, values=residuals, stage=Stage.DETRENDED)


def anomaly(x: MonthlyTimeSeries, climatology: tuple[int, int] | None = None) -> MonthlyTimeSeries:
    """Subtract each calendar month's mean over the climatology years.

    climatology is an inclusive (first_year, last_year) span; None means
    the full span of the series.  After this step every calendar month
    that is fully inside the climatology averages to zero.
    """
    _require_stage(x, Stage.DETRENDED, "anomaly")
    years = x.year_numbers()
    months = x.month_numbers()
    if climatology is None:
        climatology = (int(years[0]), int(years[-1]))
    lo, hi = climatology
    if lo > hi:
        raise ValueError("climatology span reversed")
    if lo < years[0] or hi > years[-1]:
        raise ValueError(
            f"climatology {lo}..{hi} extends outside series years {years[0]}..{years[-1]}"
        )
    in_climo = (years >= lo) & (years <= hi)
    out = x.values.copy()
    for m in range(1, 13):
        month_sel = months == m
        if not month_sel.any():
            continue
        pool = month_sel & in_climo
        if not pool.any():
            raise ValueError(f"climatology {lo}..{hi} holds no samples for month {m}")
        out[month_sel] -= x.values[pool].mean()
    return replace(x, values=out, stage=Stage.ANOMALY)


def running_mean3(x: MonthlyTimeSeries) -> MonthlyTimeSeries:
    """Centered 3-month running mean; endpoints become invalid (NaN)."""
    _require_stage(x, Stage.ANOMALY, "running_mean3")
    T = len(x)
    if T < 3:
        raise ValueError(f"running_mean3 needs at least 3 samples, got {T}")
    out = np.full(T, np.nan)
    out[1:-1] = (x.values[:-2] + x.values[1:-1] + x.values[2:]) / 3.0
    valid = np.zeros(T, dtype=bool)
    valid[1:-1] = x.valid_mask[:-2] & x.valid_mask[1:-1] & x.valid_mask[2:]
    out[~valid] = np.nan
    return replace(x, values=out, stage=Stage.SMOOTHED, valid_mask=valid)


def preprocess(
    x: MonthlyTimeSeries, climatology: tuple[int, int] | None = None
) -> MonthlyTimeSeries:
    """Full pipeline: detrend, then monthly anomaly, then 3-month smoothing."""
    _, detrended = detrend(x)
    return running_mean3(anomaly(detrended, climatology))


def select_subset(
    x: MonthlyTimeSeries, cond: SubsetCondition, require_smoothed: bool = True
) -> list[tuple[int, float]]:
    """Valid (index, value) pairs whose (value, month, year) satisfy cond."""
    if require_smoothed:
        _require_stage(x, Stage.SMOOTHED, "select_subset")
    months = x.month_numbers()
    years = x.year_numbers()
    out: list[tuple[int, float]] = []
    for t in range(len(x)):
        if not x.valid_mask[t]:
            continue
        v = float(x.values[t])
        if cond(v, int(months[t]), int(years[t])):
            out.append((t, v))
    return out


# Matrix fast path: the same three transforms applied column-wise to a
# (T, n_cells) array.  Used for gridded monthly frequencies, where a
# per-cell Python loop would dominate the run time.  Columns that contain
# any non-finite value come out all-NaN instead of raising, so permanently
# missing grid cells flow through untouched.

def detrend_matrix(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    T = values.shape[0]
    if T < 3:
        raise ValueError(f"detrend needs at least 3 samples, got {T}")
    t = np.arange(1, T + 1, dtype=np.float64)
    t_dev = t - t.mean()
    sxx = float(t_dev @ t_dev)
    col_ok = np.all(np.isfinite(values), axis=0)
    safe = np.where(col_ok[None, :], values, 0.0)
    v_mean = safe.mean(axis=0)
    slope = (t_dev @ (safe - v_mean)) / sxx
    intercept = v_mean - slope * t.mean()
    out = safe - (intercept[None, :] + np.outer(t, slope))
    out[:, ~col_ok] = np.nan
    return out


def anomaly_matrix(
    values: np.ndarray, months: np.ndarray, years: np.ndarray, climatology: tuple[int, int]
) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    lo, hi = climatology
    in_climo = (years >= lo) & (years <= hi)
    out = values.copy()
    for m in range(1, 13):
        month_sel = months == m
        if not month_sel.any():
            continue
        pool = month_sel & in_climo
        if not pool.any():
            raise ValueError(f"climatology {lo}..{hi} holds no samples for month {m}")
        out[month_sel, :] -= values[pool, :].mean(axis=0)[None, :]
    return out


def running_mean3_matrix(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=np.float64)
    T = values.shape[0]
    if T < 3:
        raise ValueError(f"running_mean3 needs at least 3 samples, got {T}")
    out = np.full_like(values, np.nan)
    out[1:-1] = (values[:-2] + values[1:-1] + values[2:]) / 3.0
    time_valid = np.zeros(T, dtype=bool)
    time_valid[1:-1] = True
    return out, time_valid


def preprocess_matrix(
    values: np.ndarray,
    start: tuple[int, int],
    climatology: tuple[int, int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise preprocess of a (T, n) matrix of monthly series.

    Returns (processed, time_valid) where time_valid flags rows with a
    complete smoothing window.  Matches preprocess() column by column.
    """
    values = np.asarray(values, dtype=np.float64)
    T = values.shape[0]
    probe = MonthlyTimeSeries(np.zeros(T), start)
    months = probe.month_numbers()
    years = probe.year_numbers()
    if climatology is None:
        climatology = (int(years[0]), int(years[-1]))
    det = detrend_matrix(values)
    anom = anomaly_matrix(det, months, years, climatology)
    return running_mean3_matrix(anom)


def series_to_csv(x: MonthlyTimeSeries, path: str | Path) -> None:
    """Write ym,value[,valid] rows; the valid column appears only if needed."""
    path = Path(path)
    with_valid = not bool(np.all(x.valid_mask))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        header = ["ym", "value"] + (["valid"] if with_valid else [])
        w.writerow(header)
        for t in range(len(x)):
            y, m = x.year_month(t)
            val = x.values[t]
            row = [format_year_month(y, m), "" if not np.isfinite(val) else repr(float(val))]
            if with_valid:
                row.append("1" if x.valid_mask[t] else "0")
            w.writerow(row)


def series_from_csv(path: str | Path, stage: Stage = Stage.RAW) -> MonthlyTimeSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty series file")
    values = []
    valid = []
    start: tuple[int, int] | None = None
    prev: tuple[int, int] | None = None
    for row in rows:
        ym = parse_year_month(row["ym"])
        if start is None:
            start = ym
        elif add_months(prev[0], prev[1], 1) != ym:  # type: ignore[index]
            raise ValueError(f"{path}: series has a gap before {ym[0]}-{ym[1]:02d}")
        prev = ym
        raw = (row.get("value") or "").strip()
        values.append(float(raw) if raw else np.nan)
        valid.append(row.get("valid", "1").strip() != "0")
    assert start is not None
    mask = np.array(valid, dtype=bool) & np.isfinite(np.array(values))
    return MonthlyTimeSeries(np.array(values), start, stage=stage, valid_mask=mask)


def series_from_values(
    values: Sequence[float] | np.ndarray,
    start: tuple[int, int],
    stage: Stage = Stage.RAW,
) -> MonthlyTimeSeries:
    return MonthlyTimeSeries(np.asarray(values, dtype=np.float64), start, stage=stage)
