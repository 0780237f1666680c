"""Outage event tables: parsing, cleaning, monthly counting.

The reader targets the federal disturbance-report extracts (annual event
tables merged into one CSV) but only relies on a header row plus three
recoverable columns: when the event began, which state it hit, and what
kind of disturbance it was.  Header spellings drifted across two decades
of filings, so each role is resolved through an alias table; both the
alias table and the list of cause keywords that count as severe weather
are arguments with documented defaults.

Rows that cannot be normalized (unparseable date, no recognizable
continental state, out-of-window date, non-weather cause when filtering)
are dropped, never guessed, and the drop tally is part of the result.
"""

from __future__ import annotations

import csv
import enum
import io
import re
import datetime as dt
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..calendars import MonthWindow
from ..errors import IngestError, TableFormatError
from ..timeseries import MonthlyTimeSeries
from .regions import CONTINENTAL_STATES, RegionMap

STATE_NAMES: dict[str, str] = {
    "AL": "Alabama", "AZ": "Arizona", "AR": "Arkansas", "CA": "California",
    "CO": "Colorado", "CT": "Connecticut", "DE": "Delaware", "FL": "Florida",
    "GA": "Georgia", "ID": "Idaho", "IL": "Illinois", "IN": "Indiana",
    "IA": "Iowa", "KS": "Kansas", "KY": "Kentucky", "LA": "Louisiana",
    "ME": "Maine", "MD": "Maryland", "MA": "Massachusetts", "MI": "Michigan",
    "MN": "Minnesota", "MS": "Mississippi", "MO": "Missouri", "MT": "Montana",
    "NE": "Nebraska", "NV": "Nevada", "NH": "New Hampshire", "NJ": "New Jersey",
    "NM": "New Mexico", "NY": "New York", "NC": "North Carolina", "ND": "North Dakota",
    "OH": "Ohio", "OK": "Oklahoma", "OR": "Oregon", "PA": "Pennsylvania",
    "RI": "Rhode Island", "SC": "South Carolina", "SD": "South Dakota",
    "TN": "Tennessee", "TX": "Texas", "UT": "Utah", "VT": "Vermont",
    "VA": "Virginia", "WA": "Washington", "WV": "West Virginia",
    "WI": "Wisconsin", "WY": "Wyoming",
}

NON_CONTINENTAL = frozenset({"AK", "HI", "PR", "GU", "VI", "AS", "MP"})

# Longest names first so e.g. "West Virginia" beats "Virginia".
_NAME_PATTERN = re.compile(
    "|".join(
        sorted((re.escape(name) for name in STATE_NAMES.values()), key=len, reverse=True)
    ),
    re.IGNORECASE,
)
_NAME_TO_CODE = {name.lower(): code for code, name in STATE_NAMES.items()}
_CODE_PATTERN = re.compile(r"\b([A-Z]{2})\b")

DEFAULT_COLUMN_ALIASES: dict[str, tuple[str, ...]] = {
    "event_id": ("event id", "incident id", "report id", "id"),
    "begin_date": (
        "date event began",
        "date event begin",
        "event began date",
        "date of incident",
        "begin date",
        "date began",
        "date",
    ),
    "state": ("area affected", "geographic areas", "geographic area", "area", "state"),
    "cause": ("event type", "type of disturbance", "disturbance type", "cause", "tags"),
    "customers": (
        "number of customers affected",
        "customers affected",
        "number of customers",
    ),
    "demand_loss": ("demand loss (mw)", "demand loss (megawatts)", "loss (mw)", "demand loss"),
}

# Cause keywords counted as severe weather (case-insensitive substring on
# the normalized cause text).  Deliberately excludes bare "fire" so fuel
# and vandalism fires stay out; weather-driven wildfire filings match via
# "wildfire" or "weather".
DEFAULT_SEVERE_WEATHER_TOKENS: tuple[str, ...] = (
    "severe weather",
    "weather",
    "storm",
    "thunder",
    "hurricane",
    "tropical",
    "tornado",
    "wind",
    "winter",
    "ice",
    "snow",
    "blizzard",
    "flood",
    "heavy rain",
    "rain",
    "lightning",
    "hail",
    "heat",
    "cold",
    "freez",
    "frost",
    "wildfire",
    "derecho",
)

_DATE_FORMATS = ("%m/%d/%Y", "%Y-%m-%d", "%m/%d/%y", "%m-%d-%Y", "%d-%b-%y", "%B %d, %Y")


class CauseCategory(enum.Enum):
    SEVERE_WEATHER = "severe_weather"
    OTHER = "other"


@dataclass(frozen=True)
class OutageRecord:
    event_id: str
    begin_date: dt.date
    state: str
    cause_category: CauseCategory
    customers_affected: int | None
    demand_loss_mw: float | None


@dataclass
class ParseResult:
    records: list[OutageRecord]
    total_rows: int
    dropped: int
    drop_reasons: Counter


def _normalize_header(name: str) -> str:
    return re.sub(r"\s+", " ", name.strip().lower())


def _resolve_columns(
    header: list[str], aliases: dict[str, tuple[str, ...]]
) -> dict[str, int]:
    normalized = [_normalize_header(h) for h in header]
    roles: dict[str, int] = {}
    for role, names in aliases.items():
        for alias in names:
            if alias in normalized:
                roles[role] = normalized.index(alias)
                break
    return roles


def extract_state(area_text: str) -> str | None:
    """First recognizable state in an area description, or None.

    Accepts full names ("West Virginia: Kanawha County") and bare postal
    codes ("TX"); multi-state fields resolve to whichever state is named
    first.  Non-continental codes return None.
    """
    text = area_text.strip()
    if not text:
        return None
    name_match = _NAME_PATTERN.search(text)
    code_match = None
    for m in _CODE_PATTERN.finditer(text):
        if m.group(1) in CONTINENTAL_STATES or m.group(1) in NON_CONTINENTAL:
            code_match = m
            break
    if name_match and (code_match is None or name_match.start() <= code_match.start()):
        return _NAME_TO_CODE[name_match.group(0).lower()]
    if code_match is not None:
        code = code_match.group(1)
        return code if code in CONTINENTAL_STATES else None
    return None


def _parse_begin_date(text: str) -> dt.date | None:
    token = text.strip().split()[0] if text.strip() else ""
    if not token:
        return None
    for fmt in _DATE_FORMATS:
        try:
            return dt.datetime.strptime(token, fmt).date()
        except ValueError:
            continue
    return None


def _parse_count(text: str | None) -> int | None:
    if text is None:
        return None
    token = text.replace(",", "").strip()
    if not token or token.lower() in {"unknown", "n/a", "na", "none", "-"}:
        return None
    try:
        return int(float(token))
    except ValueError:
        return None


def _parse_mw(text: str | None) -> float | None:
    if text is None:
        return None
    token = text.replace(",", "").strip()
    if not token or token.lower() in {"unknown", "n/a", "na", "none", "-"}:
        return None
    try:
        return float(token)
    except ValueError:
        return None


def classify_cause(cause_text: str, tokens: tuple[str, ...]) -> CauseCategory:
    text = re.sub(r"[_/]", " ", cause_text.lower())
    for token in tokens:
        if token in text:
            return CauseCategory.SEVERE_WEATHER
    return CauseCategory.OTHER


def parse_outage_records(
    source: str | Path | io.TextIOBase,
    window: MonthWindow,
    aliases: dict[str, tuple[str, ...]] | None = None,
    severe_tokens: tuple[str, ...] | None = None,
    severe_only: bool = True,
) -> ParseResult:
    """Read an outage table and return normalized records plus a drop tally.

    Every surviving record has a parseable begin date inside ``window``, a
    continental state, and (when ``severe_only``) a severe-weather cause.
    Raises TableFormatError when the header lacks the begin-date, state, or
    cause columns, and IngestError when no record survives.
    """
    aliases = aliases if aliases is not None else DEFAULT_COLUMN_ALIASES
    severe_tokens = (
        severe_tokens if severe_tokens is not None else DEFAULT_SEVERE_WEATHER_TOKENS
    )
    if isinstance(source, (str, Path)):
        try:
            fh = open(source, newline="", encoding="utf-8-sig")
        except OSError as exc:
            raise IngestError(f"cannot read outage table {source}: {exc}") from exc
        close = True
    else:
        fh, close = source, False
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableFormatError("outage table is empty") from None
        roles = _resolve_columns(header, aliases)
        required = {"begin_date", "state", "cause"}
        missing = required - set(roles)
        if missing:
            raise TableFormatError(
                f"outage table header lacks columns for: {sorted(missing)} "
                f"(header was {header!r})"
            )
        records: list[OutageRecord] = []
        reasons: Counter = Counter()
        total = 0
        for row_num, row in enumerate(reader, start=2):
            if not any(cell.strip() for cell in row):
                continue
            total += 1

            def cell(role: str) -> str:
                idx = roles.get(role)
                return row[idx] if idx is not None and idx < len(row) else ""

            begin = _parse_begin_date(cell("begin_date"))
            if begin is None:
                reasons["unparseable_date"] += 1
                continue
            if not window.contains(begin.year, begin.month):
                reasons["outside_window"] += 1
                continue
            state = extract_state(cell("state"))
            if state is None:
                reasons["no_continental_state"] += 1
                continue
            category = classify_cause(cell("cause"), severe_tokens)
            if severe_only and category is not CauseCategory.SEVERE_WEATHER:
                reasons["not_severe_weather"] += 1
                continue
            event_id = cell("event_id").strip() or f"row-{row_num}"
            records.append(
                OutageRecord(
                    event_id=event_id,
                    begin_date=begin,
                    state=state,
                    cause_category=category,
                    customers_affected=_parse_count(cell("customers")),
                    demand_loss_mw=_parse_mw(cell("demand_loss")),
                )
            )
    finally:
        if close:
            fh.close()
    if not records:
        raise IngestError("no outage records survived parsing and filtering")
    return ParseResult(
        records=records,
        total_rows=total,
        dropped=total - len(records),
        drop_reasons=reasons,
    )


_CANON_COLUMNS = (
    "event_id",
    "begin_date",
    "state",
    "cause_category",
    "customers_affected",
    "demand_loss_mw",
)


def serialize_records(records: list[OutageRecord], path: str | Path) -> None:
    """Write records in the canonical layout; parse(serialize(x)) == x."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_CANON_COLUMNS)
        for r in records:
            w.writerow(
                [
                    r.event_id,
                    r.begin_date.isoformat(),
                    r.state,
                    r.cause_category.value,
                    "" if r.customers_affected is None else r.customers_affected,
                    "" if r.demand_loss_mw is None else repr(r.demand_loss_mw),
                ]
            )


def read_canonical_records(path: str | Path) -> list[OutageRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    records = []
    for row in rows:
        records.append(
            OutageRecord(
                event_id=row["event_id"],
                begin_date=dt.date.fromisoformat(row["begin_date"]),
                state=row["state"],
                cause_category=CauseCategory(row["cause_category"]),
                customers_affected=_parse_count(row["customers_affected"]),
                demand_loss_mw=_parse_mw(row["demand_loss_mw"]),
            )
        )
    return records


@dataclass
class RegionalPon:
    """Monthly power-outage-number counts per region plus the total."""

    by_region: dict[str, MonthlyTimeSeries]
    all_us: MonthlyTimeSeries

    def totals(self) -> dict[str, int]:
        return {rid: int(s.values.sum()) for rid, s in self.by_region.items()}


def monthly_pon(
    records: list[OutageRecord], region_map: RegionMap, window: MonthWindow
) -> RegionalPon:
    """Count events per (region, month); every window month appears, zeros kept."""
    n = window.n_months
    counts = {rid: np.zeros(n, dtype=np.float64) for rid in region_map.region_order}
    for r in records:
        if not window.contains(r.begin_date.year, r.begin_date.month):
            raise ValueError(f"record {r.event_id} dated {r.begin_date} is outside {window}")
        region = region_map.region_of_state(r.state)
        counts[region][window.index_of(r.begin_date.year, r.begin_date.month)] += 1.0
    by_region = {
        rid: MonthlyTimeSeries(vals, window.start) for rid, vals in counts.items()
    }
    total = np.sum([vals for vals in counts.values()], axis=0)
    return RegionalPon(by_region=by_region, all_us=MonthlyTimeSeries(total, window.start))


def exclude_sparse_regions(pon: RegionalPon, threshold: int = 20) -> list[str]:
    """Region ids (in map order) whose window total reaches the threshold."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    eligible = [
        rid for rid, series in pon.by_region.items() if series.values.sum() >= threshold
    ]
    return eligible
