import datetime as dt

import numpy as np
import pytest

from enso_outages.errors import RegionMapError
from enso_outages.extremes import (
    EventKind,
    ExtremeConfig,
    ExtremeDayMask,
    build_thresholds,
    classify_days,
    monthly_frequency,
    nearest_rank_index,
    regional_frequency,
    regional_frequency_table,
)
from enso_outages.ingest import DailyGridField, GridVariable, default_region_map
from oracles import percentile_nearest_rank, threshold_bruteforce
from synth import daily_grid


def t2m_field(rng, ntime=830, nlat=2, nlon=2, t0=dt.date(2000, 1, 1)):
    return daily_grid(GridVariable.T2M, 27.0, -99.0, nlat, nlon, t0, ntime, rng,
                      dlat=4.0, dlon=8.0, seasonal_amp=8.0, noise=3.0, offset=15.0)


def test_nearest_rank_index_pins():
    assert nearest_rank_index(95.0, 744) == 706  # ceil(706.8) - 1
    assert nearest_rank_index(5.0, 744) == 37    # ceil(37.2) - 1
    assert nearest_rank_index(50.0, 2) == 0
    assert nearest_rank_index(95.0, 1) == 0
    assert nearest_rank_index(99.9, 10) == 9
    assert nearest_rank_index(0.5, 10) == 0
    with pytest.raises(ValueError):
        nearest_rank_index(95.0, 0)


def test_thresholds_match_bruteforce_pool_sort():
    rng = np.random.default_rng(60)
    field = t2m_field(rng)
    cfg = ExtremeConfig()
    cal = build_thresholds(field, cfg)
    for kind, pct in ((EventKind.HEATWAVE, 95.0), (EventKind.COLD_SNAP, 5.0)):
        expect = threshold_bruteforce(field.values, field.t0, 15, pct)
        got = cal.thresholds[kind]
        assert got.shape == (365, 2, 2)
        # nearest-rank selection must agree exactly, not approximately
        assert np.array_equal(got, expect), kind


def test_thresholds_ignore_year_order():
    # the pools are multisets over years, so swapping the two years of a
    # non-leap base period cannot change any threshold
    rng = np.random.default_rng(61)
    vals = rng.normal(10, 4, (730, 2, 2))
    f1 = DailyGridField(GridVariable.T2M, 27.0, 4.0, -99.0, 8.0, dt.date(2001, 1, 1), vals)
    swapped = np.concatenate([vals[365:], vals[:365]])
    f2 = DailyGridField(GridVariable.T2M, 27.0, 4.0, -99.0, 8.0, dt.date(2001, 1, 1), swapped)
    cfg = ExtremeConfig()
    c1 = build_thresholds(f1, cfg)
    c2 = build_thresholds(f2, cfg)
    for kind in (EventKind.HEATWAVE, EventKind.COLD_SNAP):
        assert np.array_equal(c1.thresholds[kind], c2.thresholds[kind])


def test_thresholds_need_two_years():
    rng = np.random.default_rng(62)
    field = t2m_field(rng, ntime=729)
    with pytest.raises(ValueError, match="2 years"):
        build_thresholds(field, ExtremeConfig())


def test_constant_field_never_flags():
    vals = np.full((800, 2, 2), 21.5)
    field = DailyGridField(GridVariable.T2M, 27.0, 4.0, -99.0, 8.0, dt.date(2000, 1, 1), vals)
    cal = build_thresholds(field, ExtremeConfig())
    assert np.all(cal.thresholds[EventKind.HEATWAVE] == 21.5)
    for kind in (EventKind.HEATWAVE, EventKind.COLD_SNAP):
        mask = classify_days(field, cal, kind)
        assert mask.mask.sum() == 0, kind  # strict comparison at the threshold


def test_planted_spikes_are_flagged():
    rng = np.random.default_rng(63)
    field = t2m_field(rng)
    spike_day = 400
    field.values[spike_day, 0, 1] = 999.0
    field.values[spike_day + 3, 1, 0] = -999.0
    cal = build_thresholds(field, ExtremeConfig())
    hot = classify_days(field, cal, EventKind.HEATWAVE)
    cold = classify_days(field, cal, EventKind.COLD_SNAP)
    assert hot.mask[spike_day, 0, 1]
    assert not cold.mask[spike_day, 0, 1]
    assert cold.mask[spike_day + 3, 1, 0]


def test_leap_day_uses_feb28_key():
    # Feb 29 2000 is day index 59 for a field starting 2000-01-01
    rng = np.random.default_rng(64)
    field = t2m_field(rng, ntime=800)
    field.values[59, 0, 0] = 500.0
    cal = build_thresholds(field, ExtremeConfig())
    hot = classify_days(field, cal, EventKind.HEATWAVE)
    assert field.date_of(59) == dt.date(2000, 2, 29)
    assert hot.mask[59, 0, 0]
    freq = monthly_frequency(hot, field.lats(), field.lons())
    feb = freq.window().index_of(2000, 2)
    assert freq.counts[feb, 0, 0] >= 1.0


def test_classify_mismatches_raise():
    rng = np.random.default_rng(65)
    t2m = t2m_field(rng)
    precip = daily_grid(GridVariable.PRECIP, 27.0, -99.0, 2, 2, dt.date(2000, 1, 1),
                        830, rng, dlat=4.0, dlon=8.0, noise=1.0, offset=3.0)
    cal_t = build_thresholds(t2m, ExtremeConfig())
    cal_p = build_thresholds(precip, ExtremeConfig())
    with pytest.raises(ValueError, match="variable mismatch"):
        classify_days(precip, cal_t, EventKind.HEATWAVE)
    with pytest.raises(ValueError, match="no heatwave"):
        classify_days(precip, cal_p, EventKind.HEATWAVE)


def test_missing_cell_propagates():
    rng = np.random.default_rng(66)
    field = t2m_field(rng)
    field.values[100, 1, 1] = np.nan  # one bad day poisons the cell
    cal = build_thresholds(field, ExtremeConfig())
    assert not cal.cell_valid[1, 1]
    assert np.all(np.isnan(cal.thresholds[EventKind.HEATWAVE][:, 1, 1]))
    hot = classify_days(field, cal, EventKind.HEATWAVE)
    assert hot.mask[:, 1, 1].sum() == 0
    freq = monthly_frequency(hot, field.lats(), field.lons())
    assert np.all(np.isnan(freq.counts[:, 1, 1]))
    assert np.isfinite(freq.counts[:, 0, 0]).all()


def test_monthly_frequency_partial_months():
    # 45 days starting mid-January: 17 January days, 28 February days
    t0 = dt.date(2000, 1, 15)
    mask = np.zeros((45, 1, 1), dtype=bool)
    mask[0] = True     # Jan 15
    mask[16] = True    # Jan 31
    mask[17] = True    # Feb 1
    mask[44] = True    # Feb 28
    dm = ExtremeDayMask(kind=EventKind.HEATWAVE, t0=t0, mask=mask,
                        cell_valid=np.ones((1, 1), dtype=bool))
    freq = monthly_frequency(dm, np.array([30.0]), np.array([-95.0]))
    assert freq.n_months == 2
    assert freq.start == (2000, 1)
    assert freq.counts[0, 0, 0] == 2.0
    assert freq.counts[1, 0, 0] == 2.0


def test_monthly_counts_bounded_by_days_in_month():
    rng = np.random.default_rng(67)
    field = t2m_field(rng, ntime=1096)
    cal = build_thresholds(field, ExtremeConfig())
    hot = classify_days(field, cal, EventKind.HEATWAVE)
    freq = monthly_frequency(hot, field.lats(), field.lons())
    window = freq.window()
    for t in range(freq.n_months):
        y, m = window.year_month(t)
        from enso_outages.calendars import days_in_month
        assert np.nanmax(freq.counts[t]) <= days_in_month(y, m)
        assert np.nanmin(freq.counts[t]) >= 0.0


def test_iid_flag_fraction_near_five_percent():
    rng = np.random.default_rng(68)
    vals = rng.normal(0, 1, (1096, 2, 3))
    field = DailyGridField(GridVariable.T2M, 27.0, 4.0, -99.0, 8.0,
                           dt.date(2001, 1, 1), vals)
    cal = build_thresholds(field, ExtremeConfig())
    for kind in (EventKind.HEATWAVE, EventKind.COLD_SNAP):
        mask = classify_days(field, cal, kind)
        frac = mask.mask.mean()
        assert 0.035 <= frac <= 0.065, (kind, frac)


def test_regional_frequency_aggregations():
    rng = np.random.default_rng(69)
    field = t2m_field(rng)  # lats [27, 31], lons [-99, -91]
    cal = build_thresholds(field, ExtremeConfig())
    hot = classify_days(field, cal, EventKind.HEATWAVE)
    freq = monthly_frequency(hot, field.lats(), field.lons())
    rmap = default_region_map()

    # cells (27,-99) and (31,-99) sit in TE; (31,-91) in S2; (27,-91) nowhere
    te_mean = regional_frequency(freq, rmap, "TE", how="mean")
    manual = (freq.counts[:, 0, 0] + freq.counts[:, 1, 0]) / 2.0
    assert np.allclose(te_mean.values, manual)

    te_max = regional_frequency(freq, rmap, "TE", how="max")
    assert np.allclose(te_max.values, np.maximum(freq.counts[:, 0, 0], freq.counts[:, 1, 0]))

    te_area = regional_frequency(freq, rmap, "TE", how="area")
    w = np.cos(np.deg2rad(np.array([27.0, 31.0])))
    w = w / w.sum()
    manual_area = freq.counts[:, 0, 0] * w[0] + freq.counts[:, 1, 0] * w[1]
    assert np.allclose(te_area.values, manual_area)

    s2 = regional_frequency(freq, rmap, "S2", how="mean")
    assert np.allclose(s2.values, freq.counts[:, 1, 1])

    with pytest.raises(RegionMapError, match="no valid"):
        regional_frequency(freq, rmap, "NW")
    with pytest.raises(RegionMapError, match="unknown region"):
        regional_frequency(freq, rmap, "ZZ")
    with pytest.raises(ValueError, match="aggregation"):
        regional_frequency(freq, rmap, "TE", how="median")

    table = regional_frequency_table(freq, rmap)
    assert set(table) == {"TE", "S2"}


def test_wet_day_thresholds():
    rng = np.random.default_rng(70)
    ntime = 800
    vals = rng.gamma(0.8, 4.0, (ntime, 1, 2))
    vals[rng.random((ntime, 1, 2)) < 0.5] = 0.0  # plenty of dry days
    vals[:, 0, 1] = 0.0  # an always-dry cell
    field = DailyGridField(GridVariable.PRECIP, 27.0, 4.0, -99.0, 8.0,
                           dt.date(2000, 1, 1), vals)
    cfg = ExtremeConfig(precip_wet_days_only=True, wet_day_min=0.1)
    cal = build_thresholds(field, cfg)
    thr = cal.thresholds[EventKind.EXTREME_PRECIP]

    # spot-check a few keys against a pool filter done by hand
    from enso_outages.calendars import doy_key, doy_window_keys
    keys = np.array([doy_key(field.t0 + dt.timedelta(days=i)) for i in range(ntime)])
    for key in (10, 59, 200, 365):
        window = set(doy_window_keys(key, 15))
        pool = [vals[i, 0, 0] for i in range(ntime) if keys[i] in window]
        wet = [v for v in pool if v > 0.1]
        assert thr[key - 1, 0, 0] == percentile_nearest_rank(wet, 95.0)

    # the dry cell has no wet samples anywhere, so no thresholds and no flags
    assert np.all(np.isnan(thr[:, 0, 1]))
    mask = classify_days(field, cal, EventKind.EXTREME_PRECIP)
    assert mask.mask[:, 0, 1].sum() == 0
    assert mask.mask[:, 0, 0].sum() > 0


def test_wet_day_path_equals_all_day_path_when_all_wet():
    rng = np.random.default_rng(71)
    vals = rng.gamma(2.0, 3.0, (760, 2, 1)) + 1.0  # every day comfortably wet
    field = DailyGridField(GridVariable.PRECIP, 27.0, 4.0, -99.0, 8.0,
                           dt.date(2000, 1, 1), vals)
    all_days = build_thresholds(field, ExtremeConfig(precip_wet_days_only=False))
    wet_only = build_thresholds(field, ExtremeConfig(precip_wet_days_only=True))
    assert np.array_equal(
        all_days.thresholds[EventKind.EXTREME_PRECIP],
        wet_only.thresholds[EventKind.EXTREME_PRECIP],
    )


def test_extreme_config_validation():
    with pytest.raises(ValueError):
        ExtremeConfig(window_half_width=-1)
    with pytest.raises(ValueError):
        ExtremeConfig(hot_percentile=0.0)
    with pytest.raises(ValueError):
        ExtremeConfig(precip_percentile=100.0)
    cfg = ExtremeConfig()
    assert cfg.percentile_for(EventKind.HEATWAVE) == 95.0
    assert cfg.percentile_for(EventKind.COLD_SNAP) == 5.0
    assert cfg.percentile_for(EventKind.EXTREME_PRECIP) == 95.0


def test_event_kind_parse():
    assert EventKind.parse("heatwave") is EventKind.HEATWAVE
    assert EventKind.parse(" Cold_Snap ") is EventKind.COLD_SNAP
    with pytest.raises(ValueError):
        EventKind.parse("drought")
