"""Daily gridded fields and the GRID1 binary container.

GRID1 layout (all little-endian, no padding):

    bytes 0..3    magic "GRD1"
    4 float64     lat0, dlat, lon0, dlon      (degrees; lat of row 0, steps)
    3 int64       nlat, nlon, ntime
    1 int64       t0 as days since 1970-01-01 (first time step)
    1 float32     missing-value sentinel
    payload       float32[ntime, nlat, nlon], C order (time outermost)

Missing cells are stored as the sentinel and surface in memory as NaN.
The same container carries daily fields and monthly count grids; only the
interpretation of the time axis differs, which callers track themselves.

A CSV adapter (columns date, lat, lon, value) is accepted for small
hand-written grids; absent (date, lat, lon) combinations become missing.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..calendars import date_from_epoch_day, epoch_day
from ..errors import GridFormatError

log = logging.getLogger(__name__)

MAGIC = b"GRD1"
_HEADER = struct.Struct("<4d3qqf")

# Common missing-value convention for float32 climate grids.
MISSING_SENTINEL_DEFAULT = np.float32(-9.96921e36)

REFERENCE_RESOLUTION = 0.5


class GridVariable(enum.Enum):
    T2M = "t2m"
    PRECIP = "precip"


@dataclass
class DailyGridField:
    """A (time, lat, lon) block of one variable at fixed daily cadence.

    values holds float64 with NaN at missing cells.  Cells are expected to
    be either valid on every day or missing on every day; mixed cells are
    tolerated but logged, and count as missing wherever an all-day cell
    mask is needed.
    """

    variable: GridVariable
    lat0: float
    dlat: float
    lon0: float
    dlon: float
    t0: dt.date
    values: np.ndarray
    missing_sentinel: float = float(MISSING_SENTINEL_DEFAULT)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("grid values must be (time, lat, lon)")

    @property
    def ntime(self) -> int:
        return self.values.shape[0]

    @property
    def nlat(self) -> int:
        return self.values.shape[1]

    @property
    def nlon(self) -> int:
        return self.values.shape[2]

    def lats(self) -> np.ndarray:
        return self.lat0 + self.dlat * np.arange(self.nlat)

    def lons(self) -> np.ndarray:
        return self.lon0 + self.dlon * np.arange(self.nlon)

    def date_of(self, index: int) -> dt.date:
        return self.t0 + dt.timedelta(days=index)

    def cell_valid(self) -> np.ndarray:
        """(nlat, nlon) True where the cell is finite on every time step."""
        return np.all(np.isfinite(self.values), axis=0)

    def mixed_cells(self) -> np.ndarray:
        finite = np.isfinite(self.values)
        return finite.any(axis=0) & ~finite.all(axis=0)


def write_grid1(field: DailyGridField, path: str | Path) -> None:
    path = Path(path)
    payload = field.values.astype(np.float32)
    sentinel = np.float32(field.missing_sentinel)
    payload = np.where(np.isfinite(payload), payload, sentinel)
    header = _HEADER.pack(
        field.lat0,
        field.dlat,
        field.lon0,
        field.dlon,
        field.nlat,
        field.nlon,
        field.ntime,
        epoch_day(field.t0),
        sentinel,
    )
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(header)
        fh.write(np.ascontiguousarray(payload, dtype="<f4").tobytes())


def _read_grid1(path: Path, variable: GridVariable) -> DailyGridField:
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise GridFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 4 + _HEADER.size:
        raise GridFormatError(f"{path}: truncated header")
    lat0, dlat, lon0, dlon, nlat, nlon, ntime, t0_day, sentinel = _HEADER.unpack_from(raw, 4)
    if nlat <= 0 or nlon <= 0 or ntime <= 0:
        raise GridFormatError(f"{path}: non-positive dimensions {(ntime, nlat, nlon)}")
    expected = 4 + _HEADER.size + 4 * ntime * nlat * nlon
    if len(raw) != expected:
        raise GridFormatError(
            f"{path}: payload size mismatch, file has {len(raw)} bytes, "
            f"header implies {expected}"
        )
    payload = np.frombuffer(raw, dtype="<f4", offset=4 + _HEADER.size).reshape(
        ntime, nlat, nlon
    )
    if np.isnan(payload).any():
        raise GridFormatError(f"{path}: NaN in payload where the sentinel was expected")
    values = payload.astype(np.float64)
    values[payload == np.float32(sentinel)] = np.nan
    field = DailyGridField(
        variable=variable,
        lat0=lat0,
        dlat=dlat,
        lon0=lon0,
        dlon=dlon,
        t0=date_from_epoch_day(t0_day),
        values=values,
        missing_sentinel=float(sentinel),
    )
    if abs(dlat) != REFERENCE_RESOLUTION or abs(dlon) != REFERENCE_RESOLUTION:
        log.info("%s: non-reference resolution dlat=%g dlon=%g", path, dlat, dlon)
    n_mixed = int(field.mixed_cells().sum())
    if n_mixed:
        log.warning("%s: %d cells are valid on some days and missing on others", path, n_mixed)
    return field


def _read_grid_csv(path: Path, variable: GridVariable) -> DailyGridField:
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise GridFormatError(f"{path}: empty grid CSV")
    required = {"date", "lat", "lon", "value"}
    if not required <= set(rows[0]):
        raise GridFormatError(f"{path}: grid CSV needs columns {sorted(required)}")
    dates = sorted({dt.date.fromisoformat(r["date"]) for r in rows})
    lats = np.array(sorted({float(r["lat"]) for r in rows}))
    lons = np.array(sorted({float(r["lon"]) for r in rows}))
    t0 = dates[0]
    ntime = (dates[-1] - t0).days + 1
    if len(lats) > 1:
        steps = np.diff(lats)
        if not np.allclose(steps, steps[0]):
            raise GridFormatError(f"{path}: irregular latitude spacing")
    if len(lons) > 1:
        steps = np.diff(lons)
        if not np.allclose(steps, steps[0]):
            raise GridFormatError(f"{path}: irregular longitude spacing")
    dlat = float(lats[1] - lats[0]) if len(lats) > 1 else REFERENCE_RESOLUTION
    dlon = float(lons[1] - lons[0]) if len(lons) > 1 else REFERENCE_RESOLUTION
    lat_idx = {v: i for i, v in enumerate(lats)}
    lon_idx = {v: i for i, v in enumerate(lons)}
    values = np.full((ntime, len(lats), len(lons)), np.nan)
    for r in rows:
        t = (dt.date.fromisoformat(r["date"]) - t0).days
        raw = r["value"].strip()
        if raw:
            values[t, lat_idx[float(r["lat"])], lon_idx[float(r["lon"])]] = float(raw)
    return DailyGridField(
        variable=variable,
        lat0=float(lats[0]),
        dlat=dlat,
        lon0=float(lons[0]),
        dlon=dlon,
        t0=t0,
        values=values,
    )


def load_grid(path: str | Path, variable: GridVariable) -> DailyGridField:
    """Load a grid from GRID1 (by magic) or the CSV adapter (by extension)."""
    path = Path(path)
    if not path.exists():
        raise GridFormatError(f"grid file not found: {path}")
    if path.suffix.lower() == ".csv":
        return _read_grid_csv(path, variable)
    return _read_grid1(path, variable)
