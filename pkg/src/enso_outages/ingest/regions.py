"""Region maps: the 12-region partition of the 48 continental states.

A region map assigns every continental state to exactly one of twelve
fixed region ids and gives each region one or more lat/lon bounding boxes
for grid-cell membership.  Maps load from TOML; the packaged default can
be overridden per run.  Boxes may overlap, in which case a cell resolves
to the first region in declaration order; overlaps are reported by the
configuration validator rather than rejected.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import RegionMapError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CANONICAL_REGIONS = ("NW", "W", "NR", "SW", "S1", "S2", "TE", "UM", "OV", "SE1", "SE2", "NE")

CONTINENTAL_STATES = frozenset(
    {
        "AL", "AZ", "AR", "CA", "CO", "CT", "DE", "FL", "GA", "ID",
        "IL", "IN", "IA", "KS", "KY", "LA", "ME", "MD", "MA", "MI",
        "MN", "MS", "MO", "MT", "NE", "NV", "NH", "NJ", "NM", "NY",
        "NC", "ND", "OH", "OK", "OR", "PA", "RI", "SC", "SD", "TN",
        "TX", "UT", "VT", "VA", "WA", "WV", "WI", "WY",
    }
)

BBox = tuple[float, float, float, float]  # lat_min, lat_max, lon_min, lon_max


@dataclass(frozen=True)
class RegionMap:
    region_order: tuple[str, ...]
    state_to_region: dict[str, str]
    bboxes: dict[str, tuple[BBox, ...]]

    def region_of_state(self, state: str) -> str:
        try:
            return self.state_to_region[state.upper()]
        except KeyError:
            raise RegionMapError(f"state {state!r} is not in the region map") from None

    def states_of(self, region: str) -> tuple[str, ...]:
        if region not in self.region_order:
            raise RegionMapError(f"unknown region id {region!r}")
        return tuple(sorted(s for s, r in self.state_to_region.items() if r == region))

    def region_of_cell(self, lat: float, lon: float) -> str | None:
        """First region in declaration order whose box contains the point."""
        for region in self.region_order:
            for lat_min, lat_max, lon_min, lon_max in self.bboxes.get(region, ()):
                if lat_min <= lat <= lat_max and lon_min <= lon <= lon_max:
                    return region
        return None

    def region_index_grid(self, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
        """(nlat, nlon) index into region_order per cell center; -1 outside."""
        lats = np.asarray(lats, dtype=np.float64)
        lons = np.asarray(lons, dtype=np.float64)
        out = np.full((lats.shape[0], lons.shape[0]), -1, dtype=np.int64)
        lat_grid = lats[:, None]
        lon_grid = lons[None, :]
        for idx in range(len(self.region_order) - 1, -1, -1):
            region = self.region_order[idx]
            for lat_min, lat_max, lon_min, lon_max in self.bboxes.get(region, ()):
                inside = (
                    (lat_grid >= lat_min)
                    & (lat_grid <= lat_max)
                    & (lon_grid >= lon_min)
                    & (lon_grid <= lon_max)
                )
                out[inside] = idx
        return out

    def bbox_overlaps(self) -> list[tuple[str, str]]:
        """Region id pairs whose boxes intersect with positive area."""
        hits = []
        for i, r1 in enumerate(self.region_order):
            for r2 in self.region_order[i + 1 :]:
                if any(
                    _boxes_intersect(b1, b2)
                    for b1 in self.bboxes.get(r1, ())
                    for b2 in self.bboxes.get(r2, ())
                ):
                    hits.append((r1, r2))
        return hits


def _boxes_intersect(a: BBox, b: BBox) -> bool:
    return a[0] < b[1] and b[0] < a[1] and a[2] < b[3] and b[2] < a[3]


def _parse_bboxes(region: str, raw: object) -> tuple[BBox, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise RegionMapError(f"region {region}: bbox must be a list")
    entries = raw if raw and isinstance(raw[0], list) else [raw]
    boxes = []
    for entry in entries:
        if not (isinstance(entry, list) and len(entry) == 4):
            raise RegionMapError(f"region {region}: bbox entries need 4 numbers")
        lat_min, lat_max, lon_min, lon_max = (float(v) for v in entry)
        if lat_min >= lat_max or lon_min >= lon_max:
            raise RegionMapError(f"region {region}: degenerate bbox {entry}")
        boxes.append((lat_min, lat_max, lon_min, lon_max))
    return tuple(boxes)


def parse_region_map(text: str) -> RegionMap:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise RegionMapError(f"region map is not valid TOML: {exc}") from exc
    regions = doc.get("regions")
    if not isinstance(regions, dict) or not regions:
        raise RegionMapError("region map defines no [regions.*] tables")
    order = []
    state_to_region: dict[str, str] = {}
    bboxes: dict[str, tuple[BBox, ...]] = {}
    for region, body in regions.items():
        if region not in CANONICAL_REGIONS:
            raise RegionMapError(f"unknown region id {region!r}")
        order.append(region)
        states = body.get("states", [])
        if not isinstance(states, list):
            raise RegionMapError(f"region {region}: states must be a list")
        for state in states:
            code = str(state).upper()
            if code not in CONTINENTAL_STATES:
                raise RegionMapError(f"region {region}: {state!r} is not a continental state")
            if code in state_to_region:
                raise RegionMapError(
                    f"state {code} assigned to both {state_to_region[code]} and {region}"
                )
            state_to_region[code] = region
        bboxes[region] = _parse_bboxes(region, body.get("bbox"))
    missing_regions = set(CANONICAL_REGIONS) - set(order)
    if missing_regions:
        raise RegionMapError(f"region map is missing regions: {sorted(missing_regions)}")
    missing_states = CONTINENTAL_STATES - set(state_to_region)
    if missing_states:
        raise RegionMapError(f"region map leaves states unassigned: {sorted(missing_states)}")
    return RegionMap(
        region_order=tuple(order), state_to_region=state_to_region, bboxes=bboxes
    )


def load_region_map(path: str | Path) -> RegionMap:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise RegionMapError(f"cannot read region map {path}: {exc}") from exc
    return parse_region_map(text)


def default_region_map() -> RegionMap:
    text = resources.files("enso_outages.data").joinpath("regions_default.toml").read_text("utf-8")
    return parse_region_map(text)
