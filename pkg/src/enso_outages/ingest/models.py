"""Climate-model registry for the projection stage.

The registry is a CSV with columns

    model,scenario,format,series_path[,historical_path]

where format is "csv" (series_path points at a long table of precomputed
regional monthly heatwave frequencies: ym,region,value) or "grid1"
(series_path is the scenario daily temperature grid and historical_path
the model's historical grid, from which thresholds and frequencies are
derived in-package).  Paths are resolved relative to the registry file.

Scenario runs must cover 2015..2100 and historical grids must reach back
to 2000 so per-model thresholds can be built on 2000..2023; coverage is
checked when the series are used, not at registry load.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..calendars import MonthWindow
from ..errors import IngestError, TableFormatError
from ..timeseries import MonthlyTimeSeries


class Scenario(enum.Enum):
    HISTORICAL = "historical"
    SSP2_45 = "ssp245"
    SSP5_85 = "ssp585"

    @classmethod
    def parse(cls, token: str) -> "Scenario":
        folded = token.strip().lower().replace("-", "").replace("_", "").replace(".", "")
        for s in cls:
            if s.value == folded:
                return s
        raise ValueError(f"unknown scenario {token!r}")


SCENARIO_WINDOW = MonthWindow(2015, 1, 2100, 12)


@dataclass(frozen=True)
class ModelEntry:
    model: str
    scenario: Scenario
    fmt: str
    series_path: Path
    historical_path: Path | None = None


def load_model_registry(path: str | Path) -> list[ModelEntry]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IngestError(f"cannot read model registry {path}: {exc}") from exc
    if not rows:
        raise TableFormatError(f"{path}: model registry has no rows")
    required = {"model", "scenario", "format", "series_path"}
    if not required <= set(rows[0]):
        raise TableFormatError(f"{path}: registry needs columns {sorted(required)}")
    base = path.parent
    entries = []
    seen: set[tuple[str, Scenario]] = set()
    for row in rows:
        fmt = row["format"].strip().lower()
        if fmt not in ("csv", "grid1"):
            raise TableFormatError(f"{path}: unknown format {row['format']!r}")
        scenario = Scenario.parse(row["scenario"])
        key = (row["model"].strip(), scenario)
        if key in seen:
            raise TableFormatError(f"{path}: duplicate entry for {key}")
        seen.add(key)
        hist = (row.get("historical_path") or "").strip()
        if fmt == "grid1" and scenario is not Scenario.HISTORICAL and not hist:
            raise TableFormatError(
                f"{path}: grid1 scenario row for {row['model']!r} needs historical_path"
            )
        entries.append(
            ModelEntry(
                model=row["model"].strip(),
                scenario=scenario,
                fmt=fmt,
                series_path=(base / row["series_path"].strip()).resolve(),
                historical_path=(base / hist).resolve() if hist else None,
            )
        )
    return entries


def load_regional_frequency_csv(
    path: str | Path, window: MonthWindow
) -> dict[str, MonthlyTimeSeries]:
    """Read a long (ym, region, value) table into per-region monthly series.

    Every region present must cover the window gaplessly.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IngestError(f"cannot read frequency table {path}: {exc}") from exc
    if not rows:
        raise TableFormatError(f"{path}: empty frequency table")
    required = {"ym", "region", "value"}
    if not required <= set(rows[0]):
        raise TableFormatError(f"{path}: frequency table needs columns {sorted(required)}")
    from ..calendars import parse_year_month

    cells: dict[str, dict[tuple[int, int], float]] = {}
    for row in rows:
        ym = parse_year_month(row["ym"])
        cells.setdefault(row["region"].strip(), {})[ym] = float(row["value"])
    out: dict[str, MonthlyTimeSeries] = {}
    for region, entries in sorted(cells.items()):
        values = np.empty(window.n_months)
        for i, ym in enumerate(window.iter_months()):
            if ym not in entries:
                raise IngestError(
                    f"{path}: region {region} lacks {ym[0]}-{ym[1]:02d} inside {window}"
                )
            values[i] = entries[ym]
        out[region] = MonthlyTimeSeries(values, window.start)
    return out
