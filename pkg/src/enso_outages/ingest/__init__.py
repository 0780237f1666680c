"""Input readers: outage tables, region maps, daily grids, index tables."""

from __future__ import annotations

from .gridio import (
    MISSING_SENTINEL_DEFAULT,
    DailyGridField,
    GridVariable,
    load_grid,
    write_grid1,
)
from .indices import EnsoIndexSeries, IndexKind, load_index_table
from .models import ModelEntry, Scenario, load_model_registry, load_regional_frequency_csv
from .records import (
    CauseCategory,
    OutageRecord,
    ParseResult,
    RegionalPon,
    classify_cause,
    exclude_sparse_regions,
    extract_state,
    monthly_pon,
    parse_outage_records,
    read_canonical_records,
    serialize_records,
)
from .regions import (
    CANONICAL_REGIONS,
    CONTINENTAL_STATES,
    RegionMap,
    default_region_map,
    load_region_map,
    parse_region_map,
)

__all__ = [
    "CANONICAL_REGIONS",
    "CONTINENTAL_STATES",
    "CauseCategory",
    "DailyGridField",
    "EnsoIndexSeries",
    "GridVariable",
    "IndexKind",
    "MISSING_SENTINEL_DEFAULT",
    "ModelEntry",
    "OutageRecord",
    "ParseResult",
    "RegionMap",
    "RegionalPon",
    "Scenario",
    "classify_cause",
    "default_region_map",
    "exclude_sparse_regions",
    "extract_state",
    "load_grid",
    "load_index_table",
    "load_model_registry",
    "load_region_map",
    "load_regional_frequency_csv",
    "monthly_pon",
    "parse_outage_records",
    "parse_region_map",
    "read_canonical_records",
    "serialize_records",
    "write_grid1",
]
