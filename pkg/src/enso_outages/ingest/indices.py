"""Monthly climate-index tables (MEI, Nino SST indices, SOI).

Three common CSV layouts are accepted:

    year,month,value        one row per month
    ym,value                "YYYY-MM" stamps
    year,jan,feb,...,dec    one row per year (wide)

Values must cover the requested window without gaps; sentinel entries
(empty, or magnitudes >= 99) inside the window are an error, not a guess.
"""

from __future__ import annotations

import csv
import enum
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..calendars import MonthWindow, parse_year_month
from ..errors import IngestError, TableFormatError
from ..timeseries import MonthlyTimeSeries


class IndexKind(enum.Enum):
    MEI = "MEI"
    NINO34 = "Nino34"
    NINO3 = "Nino3"
    NINO4 = "Nino4"
    SOI = "SOI"

    @classmethod
    def parse(cls, token: str) -> "IndexKind":
        folded = token.strip().lower().replace(".", "").replace("_", "").replace("-", "")
        for kind in cls:
            if kind.value.lower() == folded:
                return kind
        aliases = {"nino3.4": cls.NINO34, "meiv2": cls.MEI}
        if token.strip().lower() in aliases:
            return aliases[token.strip().lower()]
        raise ValueError(f"unknown index kind {token!r}")


@dataclass(frozen=True)
class EnsoIndexSeries:
    kind: IndexKind
    series: MonthlyTimeSeries


_MONTH_COLUMNS = ("jan", "feb", "mar", "apr", "may", "jun",
                  "jul", "aug", "sep", "oct", "nov", "dec")

_SENTINEL_MAGNITUDE = 99.0


def _norm(h: str) -> str:
    return re.sub(r"\s+", "", h.strip().lower())


def _value_or_none(token: str) -> float | None:
    token = token.strip()
    if not token:
        return None
    v = float(token)
    if abs(v) >= _SENTINEL_MAGNITUDE:
        return None
    return v


def load_index_table(
    path: str | Path, kind: IndexKind | str, window: MonthWindow
) -> EnsoIndexSeries:
    """Read one index table and slice it to the window (gapless, raw stage)."""
    if isinstance(kind, str):
        kind = IndexKind.parse(kind)
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IngestError(f"cannot read index table {path}: {exc}") from exc
    rows = [r for r in rows if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise TableFormatError(f"{path}: index table needs a header and data rows")
    header = [_norm(h) for h in rows[0]]
    by_month: dict[tuple[int, int], float | None] = {}

    if set(_MONTH_COLUMNS) <= set(header):
        year_col = header.index("year")
        month_cols = [header.index(m) for m in _MONTH_COLUMNS]
        for row in rows[1:]:
            year = int(row[year_col])
            for m, col in enumerate(month_cols, start=1):
                if col < len(row):
                    by_month[(year, m)] = _value_or_none(row[col])
    elif "year" in header and "month" in header:
        year_col = header.index("year")
        month_col = header.index("month")
        value_col = next(
            (i for i, h in enumerate(header) if h not in ("year", "month")), None
        )
        if value_col is None:
            raise TableFormatError(f"{path}: no value column")
        for row in rows[1:]:
            by_month[(int(row[year_col]), int(row[month_col]))] = _value_or_none(row[value_col])
    else:
        ym_col = next((i for i, h in enumerate(header) if h in ("ym", "date", "yearmonth")), None)
        if ym_col is None:
            raise TableFormatError(
                f"{path}: unrecognized index layout (header {rows[0]!r})"
            )
        value_col = next(i for i, h in enumerate(header) if i != ym_col)
        for row in rows[1:]:
            by_month[parse_year_month(row[ym_col])] = _value_or_none(row[value_col])

    values = np.empty(window.n_months)
    for i, (year, month) in enumerate(window.iter_months()):
        if (year, month) not in by_month:
            raise IngestError(f"{path}: no entry for {year}-{month:02d} inside {window}")
        v = by_month[(year, month)]
        if v is None:
            raise IngestError(f"{path}: missing value for {year}-{month:02d} inside {window}")
        values[i] = v
    return EnsoIndexSeries(kind=kind, series=MonthlyTimeSeries(values, window.start))
