import datetime as dt
import io
import logging
import struct

import numpy as np
import pytest

from enso_outages.calendars import MonthWindow
from enso_outages.errors import (
    GridFormatError,
    IngestError,
    RegionMapError,
    TableFormatError,
)
from enso_outages.ingest import (
    CauseCategory,
    DailyGridField,
    GridVariable,
    IndexKind,
    Scenario,
    classify_cause,
    default_region_map,
    exclude_sparse_regions,
    extract_state,
    load_grid,
    load_index_table,
    load_model_registry,
    load_regional_frequency_csv,
    load_region_map,
    monthly_pon,
    parse_outage_records,
    parse_region_map,
    read_canonical_records,
    serialize_records,
    write_grid1,
)
from enso_outages.ingest.records import DEFAULT_SEVERE_WEATHER_TOKENS

W2005 = MonthWindow(2005, 1, 2006, 12)


def outage_csv(rows, header=None):
    header = header or "Event ID,Date Event Began,Area Affected,Event Type,Number of Customers Affected,Demand Loss (MW)"
    return io.StringIO(header + "\n" + "\n".join(rows) + "\n")


# ------------------------------------------------------------------ records

def test_parse_outage_records_counts_and_drops():
    src = outage_csv([
        "e1,2005-06-12,Texas,Severe Weather - Thunderstorms,12000,300",
        "e2,06/14/2005,TX: Harris County,Severe Weather,,",
        "e3,2005-07-01,Hawaii,Severe Weather,100,",
        "e4,2005-07-02,Texas,Vandalism,100,",
        "e5,not-a-date,Texas,Severe Weather,100,",
        "e6,2004-12-31,Texas,Severe Weather,100,",
        ",2005-08-05,Ohio,Winter Storm,,",
    ])
    res = parse_outage_records(src, W2005)
    assert res.total_rows == 7
    assert len(res.records) == 3
    assert res.dropped == 4
    assert res.drop_reasons["no_continental_state"] == 1
    assert res.drop_reasons["not_severe_weather"] == 1
    assert res.drop_reasons["unparseable_date"] == 1
    assert res.drop_reasons["outside_window"] == 1
    r1, r2, r3 = res.records
    assert (r1.state, r1.customers_affected, r1.demand_loss_mw) == ("TX", 12000, 300.0)
    assert r2.begin_date == dt.date(2005, 6, 14)
    assert r3.event_id == "row-8"  # blank id falls back to the row number
    assert r3.state == "OH"


def test_parse_outage_records_header_aliases():
    alt = outage_csv(
        ["x1,2005-03-02,Georgia,storm,5,1.5"],
        header="id,begin date,state,cause,customers,mw lost",
    )
    res = parse_outage_records(alt, W2005)
    assert res.records[0].state == "GA"
    assert res.records[0].cause_category is CauseCategory.SEVERE_WEATHER


def test_parse_outage_records_header_errors():
    with pytest.raises(TableFormatError):
        parse_outage_records(io.StringIO("a,b,c\n1,2,3\n"), W2005)
    with pytest.raises(TableFormatError):
        parse_outage_records(io.StringIO(""), W2005)
    # all rows filtered away
    src = outage_csv(["e1,2005-01-01,Texas,Vandalism,,"])
    with pytest.raises(IngestError):
        parse_outage_records(src, W2005)


def test_severe_only_flag_keeps_other_causes():
    src = outage_csv([
        "e1,2005-01-01,Texas,Vandalism,,",
        "e2,2005-01-02,Texas,Severe Weather,,",
    ])
    res = parse_outage_records(src, W2005, severe_only=False)
    assert len(res.records) == 2
    cats = {r.event_id: r.cause_category for r in res.records}
    assert cats["e1"] is CauseCategory.OTHER
    assert cats["e2"] is CauseCategory.SEVERE_WEATHER


def test_extract_state_precedence_rules():
    assert extract_state("Texas") == "TX"
    assert extract_state("TX") == "TX"
    assert extract_state("tx") is None  # lowercase bare codes are too risky
    assert extract_state("texas") == "TX"
    assert extract_state("West Virginia: Kanawha") == "WV"
    assert extract_state("Virginia; West Virginia") == "VA"
    assert extract_state("Arkansas") == "AR"
    assert extract_state("Kansas City, Kansas") == "KS"
    assert extract_state("Florida, Georgia") == "FL"
    assert extract_state("Hawaii") is None
    assert extract_state("PR") is None
    assert extract_state("Central Maine") == "ME"
    assert extract_state("") is None
    assert extract_state("service territory") is None


def test_classify_cause_tokens():
    toks = DEFAULT_SEVERE_WEATHER_TOKENS
    severe = ["Severe Weather - Hurricane Ike", "winter storm", "ICE STORM",
              "severe_weather/flooding", "Heat Wave", "High Winds"]
    for text in severe:
        assert classify_cause(text, toks) is CauseCategory.SEVERE_WEATHER, text
    other = ["Vandalism", "Equipment Failure", "Cyber Event", "Fuel Supply"]
    for text in other:
        assert classify_cause(text, toks) is CauseCategory.OTHER, text


def test_serialize_round_trip(tmp_path):
    src = outage_csv([
        "e1,2005-06-12,Texas,Severe Weather - Thunderstorms,12000,300.5",
        "e2,2005-06-14,Ohio,Winter Storm,,",
    ])
    records = parse_outage_records(src, W2005).records
    p = tmp_path / "canon.csv"
    serialize_records(records, p)
    back = read_canonical_records(p)
    assert back == records
    serialize_records(back, p)
    assert read_canonical_records(p) == records


def test_monthly_pon_conservation_and_zeros():
    rmap = default_region_map()
    src = outage_csv([
        "e1,2005-06-12,Texas,Severe Weather,,",
        "e2,2005-06-20,Texas,Severe Weather,,",
        "e3,2005-07-01,California,Severe Weather,,",
        "e4,2006-02-01,Maine,Severe Weather,,",
    ])
    records = parse_outage_records(src, W2005).records
    pon = monthly_pon(records, rmap, W2005)
    assert set(pon.by_region) == set(rmap.region_order)
    assert pon.by_region["TE"].values[W2005.index_of(2005, 6)] == 2.0
    assert pon.by_region["W"].values[W2005.index_of(2005, 7)] == 1.0
    assert pon.by_region["NE"].values[W2005.index_of(2006, 2)] == 1.0
    assert pon.all_us.values.sum() == len(records)
    total_by_region = sum(s.values.sum() for s in pon.by_region.values())
    assert total_by_region == len(records)
    assert len(pon.all_us) == W2005.n_months
    # months with no events stay present as zeros
    assert pon.by_region["TE"].values[0] == 0.0


def test_monthly_pon_rejects_out_of_window_record():
    rmap = default_region_map()
    src = outage_csv(["e1,2005-06-12,Texas,Severe Weather,,"])
    records = parse_outage_records(src, W2005).records
    with pytest.raises(ValueError):
        monthly_pon(records, rmap, MonthWindow(2006, 1, 2006, 12))


def test_exclude_sparse_regions_boundary():
    rmap = default_region_map()
    rows = ["e%d,2005-06-%02d,Texas,Severe Weather,," % (i, (i % 28) + 1) for i in range(20)]
    rows += ["k%d,2005-06-%02d,Maine,Severe Weather,," % (i, (i % 28) + 1) for i in range(19)]
    records = parse_outage_records(outage_csv(rows), W2005).records
    pon = monthly_pon(records, rmap, W2005)
    eligible = exclude_sparse_regions(pon, threshold=20)
    assert "TE" in eligible  # exactly 20 events is retained
    assert "NE" not in eligible  # 19 is excluded
    # order follows the map's declaration order
    assert eligible == [r for r in rmap.region_order if r in set(eligible)]


# ------------------------------------------------------------------ regions

def test_default_region_map_shape():
    rmap = default_region_map()
    assert len(rmap.region_order) == 12
    assert rmap.region_order[0] == "NW"
    states = [s for r in rmap.region_order for s in rmap.states_of(r)]
    assert len(states) == 48
    assert len(set(states)) == 48
    assert rmap.region_of_state("TX") == "TE"
    assert rmap.region_of_state("ND") == "NR"
    with pytest.raises(RegionMapError):
        rmap.region_of_state("AK")


def test_region_of_cell_and_grid():
    rmap = default_region_map()
    assert rmap.region_of_cell(31.0, -99.0) == "TE"
    assert rmap.region_of_cell(0.0, 0.0) is None
    lats = np.array([31.0, 45.0, 0.0])
    lons = np.array([-99.0, -120.0, -99.0])
    grid = rmap.region_index_grid(lats, lons)
    assert grid.shape == (3, 3)
    for i, lat in enumerate(lats):
        for j, lon in enumerate(lons):
            rid = rmap.region_of_cell(float(lat), float(lon))
            expect = -1 if rid is None else rmap.region_order.index(rid)
            assert grid[i, j] == expect
    assert len(rmap.bbox_overlaps()) > 0


def test_region_of_cell_first_declared_region_wins():
    from enso_outages.ingest import RegionMap

    # hand-built map: the two boxes overlap on lon -103..-94, lat 33..36
    rmap = RegionMap(
        region_order=("TE", "S1"),
        state_to_region={"TX": "TE", "KS": "S1", "OK": "S1"},
        bboxes={
            "TE": ((25.0, 36.0, -107.0, -93.0),),
            "S1": ((33.0, 40.0, -103.0, -94.0),),
        },
    )
    assert rmap.region_of_cell(34.0, -100.0) == "TE"
    assert rmap.region_of_cell(38.0, -100.0) == "S1"
    assert rmap.bbox_overlaps() == [("TE", "S1")]
    grid = rmap.region_index_grid(np.array([34.0, 38.0]), np.array([-100.0]))
    assert grid[0, 0] == 0 and grid[1, 0] == 1

    # the default map's declaration order drives its cell precedence too
    dmap = default_region_map()
    first_pair = dmap.bbox_overlaps()[0]
    assert dmap.region_order.index(first_pair[0]) < dmap.region_order.index(first_pair[1])


def default_map_text():
    from importlib import resources

    return resources.files("enso_outages.data").joinpath("regions_default.toml").read_text("utf-8")


def test_parse_region_map_validation_errors():
    good = default_map_text()
    assert len(parse_region_map(good).region_order) == 12

    # duplicate state assignment
    with pytest.raises(RegionMapError, match="TX"):
        parse_region_map(good.replace('"KS", "OK"', '"KS", "OK", "TX"', 1))
    # non-continental state
    with pytest.raises(RegionMapError, match="AK"):
        parse_region_map(good.replace('"WA", ', '"AK", "WA", ', 1))
    # a state left out entirely
    with pytest.raises(RegionMapError, match="unassigned"):
        parse_region_map(good.replace('"ID", ', "", 1).replace(', "ID"', "", 1))
    # unknown region id
    with pytest.raises(RegionMapError, match="unknown region"):
        parse_region_map(good.replace("[regions.NW]", "[regions.XX]", 1))
    # not TOML at all
    with pytest.raises(RegionMapError, match="TOML"):
        parse_region_map("not valid toml [")
    # degenerate bbox
    with pytest.raises(RegionMapError, match="bbox|degenerate"):
        parse_region_map(good.replace("bbox = [42.0, 49.0", "bbox = [49.0, 42.0", 1))


def test_parse_region_map_missing_region(tmp_path):
    good = default_map_text()
    start = good.index("[regions.W]")
    end = good.index("[regions.NR]")
    with pytest.raises(RegionMapError, match="missing"):
        parse_region_map(good[:start] + good[end:])
    p = tmp_path / "absent.toml"
    with pytest.raises(RegionMapError, match="cannot read"):
        load_region_map(p)


# ------------------------------------------------------------------- grid io

def make_field(rng, ntime=40, nlat=3, nlon=4, variable=GridVariable.T2M):
    vals = rng.normal(10, 5, (ntime, nlat, nlon))
    return DailyGridField(
        variable=variable,
        lat0=30.0, dlat=0.5, lon0=-100.0, dlon=0.5,
        t0=dt.date(2000, 1, 1),
        values=vals,
    )


def test_grid1_round_trip(tmp_path):
    rng = np.random.default_rng(50)
    field = make_field(rng)
    field.values[:, 1, 2] = np.nan  # a permanently missing cell
    p = tmp_path / "t.gr1"
    write_grid1(field, p)
    back = load_grid(p, GridVariable.T2M)
    assert back.variable is GridVariable.T2M
    assert back.ntime == field.ntime
    assert back.t0 == field.t0
    assert np.allclose(back.lats(), field.lats())
    assert np.allclose(back.lons(), field.lons())
    # payload is float32 on disk
    assert np.array_equal(
        np.asarray(back.values, dtype=np.float32),
        np.asarray(field.values, dtype=np.float32),
        equal_nan=True,
    )
    assert not back.cell_valid()[1, 2]
    assert back.cell_valid()[0, 0]
    assert back.date_of(5) == dt.date(2000, 1, 6)


def test_grid1_malformed_files(tmp_path):
    rng = np.random.default_rng(51)
    field = make_field(rng, ntime=5)
    good = tmp_path / "good.gr1"
    write_grid1(field, good)
    raw = good.read_bytes()

    bad_magic = tmp_path / "magic.gr1"
    bad_magic.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(GridFormatError, match="magic"):
        load_grid(bad_magic, GridVariable.T2M)

    truncated = tmp_path / "trunc.gr1"
    truncated.write_bytes(raw[:-33])
    with pytest.raises(GridFormatError):
        load_grid(truncated, GridVariable.T2M)

    tiny = tmp_path / "tiny.gr1"
    tiny.write_bytes(raw[:10])
    with pytest.raises(GridFormatError):
        load_grid(tiny, GridVariable.T2M)


def test_grid1_rejects_nan_payload(tmp_path):
    rng = np.random.default_rng(52)
    field = make_field(rng, ntime=4, nlat=2, nlon=2)
    p = tmp_path / "n.gr1"
    write_grid1(field, p)
    raw = bytearray(p.read_bytes())
    header_size = len(raw) - 4 * 2 * 2 * 4
    struct.pack_into("<f", raw, header_size, float("nan"))
    p.write_bytes(bytes(raw))
    with pytest.raises(GridFormatError, match="[Nn]a[Nn]"):
        load_grid(p, GridVariable.T2M)


def test_grid1_mixed_cell_warning(tmp_path, caplog):
    rng = np.random.default_rng(53)
    field = make_field(rng, ntime=6, nlat=2, nlon=2)
    field.values[3, 0, 0] = np.nan  # intermittent gap, not a missing cell
    p = tmp_path / "m.gr1"
    write_grid1(field, p)
    with caplog.at_level(logging.WARNING):
        back = load_grid(p, GridVariable.T2M)
    assert any("mixed" in m.lower() or "intermittent" in m.lower() for m in caplog.messages)
    assert back.mixed_cells()[0, 0]
    assert not back.cell_valid()[0, 0]


def test_grid_csv_adapter(tmp_path):
    p = tmp_path / "g.csv"
    lines = ["date,lat,lon,value"]
    for day in (1, 2):
        for lat in (30.0, 30.5):
            for lon in (-100.0, -99.5):
                lines.append(f"2000-01-0{day},{lat},{lon},{day * 10 + lat + lon}")
    p.write_text("\n".join(lines) + "\n")
    field = load_grid(p, GridVariable.PRECIP)
    assert field.ntime == 2
    assert field.nlat == 2 and field.nlon == 2
    assert field.t0 == dt.date(2000, 1, 1)
    assert field.values[0, 0, 0] == pytest.approx(10 + 30.0 - 100.0)
    assert field.values[1, 1, 1] == pytest.approx(20 + 30.5 - 99.5)


def test_grid_csv_missing_combo_is_nan(tmp_path):
    p = tmp_path / "g2.csv"
    p.write_text(
        "date,lat,lon,value\n"
        "2000-01-01,30.0,-100.0,1.0\n"
        "2000-01-01,30.5,-100.0,2.0\n"
        "2000-01-02,30.0,-100.0,3.0\n"
    )
    field = load_grid(p, GridVariable.T2M)
    assert field.ntime == 2 and field.nlat == 2 and field.nlon == 1
    assert np.isnan(field.values[1, 1, 0])


# ------------------------------------------------------------------- indices

def test_index_table_layouts_agree(tmp_path):
    window = MonthWindow(2000, 1, 2001, 12)
    vals = {(y, m): round(np.sin(y + m / 7.0), 4) for y in (1999, 2000, 2001) for m in range(1, 13)}

    long_form = tmp_path / "long.csv"
    with long_form.open("w") as fh:
        fh.write("year,month,value\n")
        for (y, m), v in sorted(vals.items()):
            fh.write(f"{y},{m},{v}\n")

    ym_form = tmp_path / "ym.csv"
    with ym_form.open("w") as fh:
        fh.write("ym,mei\n")
        for (y, m), v in sorted(vals.items()):
            fh.write(f"{y}-{m:02d},{v}\n")

    wide_form = tmp_path / "wide.csv"
    with wide_form.open("w") as fh:
        fh.write("year," + ",".join("jan feb mar apr may jun jul aug sep oct nov dec".split()) + "\n")
        for y in (1999, 2000, 2001):
            fh.write(str(y) + "," + ",".join(str(vals[(y, m)]) for m in range(1, 13)) + "\n")

    a = load_index_table(long_form, "MEI", window)
    b = load_index_table(ym_form, IndexKind.MEI, window)
    c = load_index_table(wide_form, "meiv2", window)
    assert a.kind is IndexKind.MEI and b.kind is IndexKind.MEI and c.kind is IndexKind.MEI
    assert np.allclose(a.series.values, b.series.values)
    assert np.allclose(a.series.values, c.series.values)
    assert len(a.series) == window.n_months
    assert a.series.start == (2000, 1)


def test_index_kind_aliases():
    assert IndexKind.parse("nino3.4") is IndexKind.NINO34
    assert IndexKind.parse("Nino 3.4".replace(" ", "")) is IndexKind.NINO34
    assert IndexKind.parse("soi") is IndexKind.SOI
    assert IndexKind.parse("NINO3") is IndexKind.NINO3
    with pytest.raises(ValueError):
        IndexKind.parse("enso99")


def test_index_table_gaps_and_sentinels(tmp_path):
    window = MonthWindow(2000, 1, 2000, 6)
    gap = tmp_path / "gap.csv"
    gap.write_text("year,month,value\n2000,1,0.1\n2000,2,0.2\n2000,4,0.4\n"
                   "2000,5,0.5\n2000,6,0.6\n")
    with pytest.raises(IngestError, match="2000-03"):
        load_index_table(gap, "MEI", window)

    sentinel = tmp_path / "sent.csv"
    sentinel.write_text("year,month,value\n" + "\n".join(
        f"2000,{m},{-999.0 if m == 3 else 0.1 * m}" for m in range(1, 7)) + "\n")
    with pytest.raises(IngestError, match="2000-03"):
        load_index_table(sentinel, "MEI", window)

    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(TableFormatError):
        load_index_table(bad, "MEI", window)


# -------------------------------------------------------------------- models

def test_model_registry_parsing(tmp_path):
    (tmp_path / "m1_ssp245.csv").write_text("ym,region,value\n")
    (tmp_path / "m1_hist.gr1").write_bytes(b"")
    (tmp_path / "m1_ssp585.gr1").write_bytes(b"")
    reg = tmp_path / "models.csv"
    reg.write_text(
        "model,scenario,format,series_path,historical_path\n"
        "m1,ssp245,csv,m1_ssp245.csv,\n"
        "m1,SSP5-85,grid1,m1_ssp585.gr1,m1_hist.gr1\n"
    )
    entries = load_model_registry(reg)
    assert len(entries) == 2
    assert entries[0].scenario is Scenario.SSP2_45
    assert entries[0].fmt == "csv"
    assert entries[0].series_path == (tmp_path / "m1_ssp245.csv").resolve()
    assert entries[1].scenario is Scenario.SSP5_85
    assert entries[1].historical_path == (tmp_path / "m1_hist.gr1").resolve()


def test_model_registry_errors(tmp_path):
    reg = tmp_path / "models.csv"
    reg.write_text(
        "model,scenario,format,series_path\n"
        "m1,ssp245,csv,a.csv\n"
        "m1,ssp245,csv,b.csv\n"
    )
    with pytest.raises(TableFormatError, match="duplicate"):
        load_model_registry(reg)

    reg.write_text("model,scenario,format,series_path\nm1,ssp585,grid1,a.gr1\n")
    with pytest.raises(TableFormatError, match="historical"):
        load_model_registry(reg)

    reg.write_text("model,scenario,format,series_path\nm1,rcp85,csv,a.csv\n")
    with pytest.raises(ValueError):
        load_model_registry(reg)

    reg.write_text("model,scenario,format,series_path\nm1,ssp245,hdf,a\n")
    with pytest.raises(TableFormatError, match="format"):
        load_model_registry(reg)

    reg.write_text("model,scenario\n")
    with pytest.raises(TableFormatError):
        load_model_registry(reg)


def test_regional_frequency_csv(tmp_path):
    window = MonthWindow(2015, 1, 2015, 3)
    p = tmp_path / "freq.csv"
    p.write_text(
        "ym,region,value\n"
        "2015-01,TE,0.5\n2015-02,TE,1.5\n2015-03,TE,2.5\n"
        "2015-01,NE,0.0\n2015-02,NE,1.0\n2015-03,NE,2.0\n"
    )
    table = load_regional_frequency_csv(p, window)
    assert set(table) == {"TE", "NE"}
    assert list(table["TE"].values) == [0.5, 1.5, 2.5]
    assert table["NE"].start == (2015, 1)

    p.write_text("ym,region,value\n2015-01,TE,0.5\n2015-03,TE,2.5\n")
    with pytest.raises(IngestError, match="2015-02"):
        load_regional_frequency_csv(p, window)
