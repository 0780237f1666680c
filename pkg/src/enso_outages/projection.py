"""Projecting springtime outage counts from climate-model ensembles.

The projection chain is deliberately simple and auditable:

1. For each region, springtime (MAM) heatwave frequency and springtime
   outage counts over the observation years give one sample per year;
   both sides stay in raw units (no detrending or smoothing), because the
   fitted line must map absolute frequencies to absolute counts.
2. An OLS line PON = a + b * D is fitted per region; regions whose slope
   fails the two-sided t test at the eligibility level (p <= alpha) are
   dropped from projection rather than extrapolated.
3. Each climate model contributes its own springtime frequency series
   (2015..2100), derived with thresholds from that model's own
   2000..2023 climate, so model bias largely cancels.
4. Every model is pushed through every eligible region's line; negative
   predictions clip to zero (counts cannot be negative).  Ensemble
   envelopes are the across-model mean, minimum, and maximum, with
   models always folded in name order so reruns are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calendars import SEASON_MONTHS
from .errors import IngestError
from .extremes import (
    EventKind,
    ExtremeConfig,
    build_thresholds,
    classify_days,
    monthly_frequency,
    regional_frequency,
)
from .ingest.gridio import DailyGridField, GridVariable, load_grid
from .ingest.models import SCENARIO_WINDOW, ModelEntry, Scenario, load_regional_frequency_csv
from .ingest.regions import RegionMap
from .stats import LinearModel, ols_fit, pearson
from .timeseries import MonthlyTimeSeries, Stage

DEFAULT_ELIGIBILITY_ALPHA = 0.05
DEFAULT_BASE_PERIOD = (2000, 2010)
DEFAULT_LATE_PERIOD = (2011, 2023)
DEFAULT_PERIODS = {"mid_term": (2041, 2060), "long_term": (2081, 2100)}


def spring_yearly(
    series: MonthlyTimeSeries, stat: str = "mean"
) -> tuple[np.ndarray, np.ndarray]:
    """Per-year springtime aggregate of a raw monthly series.

    stat="mean" averages the MAM months present in the series span of
    each year; stat="sum" totals them.  Years with no spring month in
    span are omitted.  Returns (years, values).
    """
    if series.stage is not Stage.RAW:
        raise ValueError("spring aggregation expects a raw series")
    if stat not in ("mean", "sum"):
        raise ValueError(f"unknown spring statistic {stat!r}")
    months = series.month_numbers()
    years = series.year_numbers()
    in_spring = np.isin(months, SEASON_MONTHS["MAM"])
    out_years = []
    out_values = []
    for year in np.unique(years):
        sel = in_spring & (years == year) & series.valid_mask
        if not sel.any():
            continue
        vals = series.values[sel]
        out_years.append(int(year))
        out_values.append(float(vals.sum() if stat == "sum" else vals.mean()))
    return np.array(out_years, dtype=np.int64), np.array(out_values)


def _period_mean(years: np.ndarray, values: np.ndarray, period: tuple[int, int]) -> float:
    lo, hi = period
    sel = (years >= lo) & (years <= hi)
    if not sel.any():
        raise ValueError(f"no yearly samples inside {lo}..{hi}")
    return float(values[sel].mean())


@dataclass(frozen=True)
class AmplifiedRatio:
    """Change in springtime extremes and outages between two periods.

    delta_days is a difference of frequency means (late minus base);
    pon_ratio the ratio of outage means.  A zero outage baseline makes
    the ratio undefined; it is reported as NaN with baseline_zero set
    instead of being silently dropped or faked as infinity.
    """

    region: str
    period: str
    scenario: str | None
    delta_days: float
    pon_ratio: float
    baseline_zero: bool


def historical_amplification(
    spring_freq: dict[str, tuple[np.ndarray, np.ndarray]],
    spring_pon: dict[str, tuple[np.ndarray, np.ndarray]],
    base_period: tuple[int, int] = DEFAULT_BASE_PERIOD,
    late_period: tuple[int, int] = DEFAULT_LATE_PERIOD,
) -> dict[str, AmplifiedRatio]:
    """Observed late-versus-base springtime change per region."""
    out: dict[str, AmplifiedRatio] = {}
    label = f"{late_period[0]}-{late_period[1]}"
    for region in spring_freq:
        if region not in spring_pon:
            continue
        fy, fv = spring_freq[region]
        py, pv = spring_pon[region]
        delta = _period_mean(fy, fv, late_period) - _period_mean(fy, fv, base_period)
        base = _period_mean(py, pv, base_period)
        late = _period_mean(py, pv, late_period)
        zero = base == 0.0
        out[region] = AmplifiedRatio(
            region=region,
            period=label,
            scenario=None,
            delta_days=float(delta),
            pon_ratio=np.nan if zero else float(late / base),
            baseline_zero=zero,
        )
    return out


@dataclass(frozen=True)
class RegionalFit:
    """Per-region line from springtime frequency to springtime outages."""

    region: str
    model: LinearModel
    r: float
    eligible: bool
    n_years: int


def fit_regional_model(
    region: str,
    spring_freq: tuple[np.ndarray, np.ndarray],
    spring_pon: tuple[np.ndarray, np.ndarray],
    alpha: float = DEFAULT_ELIGIBILITY_ALPHA,
) -> RegionalFit:
    """OLS fit over the years both sides cover; eligibility is p <= alpha."""
    fy, fv = spring_freq
    py, pv = spring_pon
    common, fi, pi = np.intersect1d(fy, py, return_indices=True)
    if common.size < 3:
        raise ValueError(f"region {region}: fewer than 3 overlapping spring samples")
    x = fv[fi]
    y = pv[pi]
    model = ols_fit(x, y)
    r = pearson(x, y)
    return RegionalFit(
        region=region,
        model=model,
        r=float(r),
        eligible=bool(model.slope_pvalue <= alpha),
        n_years=int(common.size),
    )


@dataclass
class ModelSpringFrequency:
    """One model run's springtime heatwave frequency per region."""

    model: str
    scenario: Scenario
    years: np.ndarray
    by_region: dict[str, np.ndarray]


def _concat_fields(hist: DailyGridField, scen: DailyGridField) -> DailyGridField:
    import datetime as dt

    same_geom = (
        hist.lat0 == scen.lat0
        and hist.dlat == scen.dlat
        and hist.lon0 == scen.lon0
        and hist.dlon == scen.dlon
        and hist.nlat == scen.nlat
        and hist.nlon == scen.nlon
    )
    if not same_geom:
        raise IngestError("historical and scenario grids have different geometry")
    if hist.t0 + dt.timedelta(days=hist.ntime) != scen.t0:
        raise IngestError(
            f"historical grid ends {hist.t0 + dt.timedelta(days=hist.ntime - 1)}, "
            f"scenario starts {scen.t0}: not contiguous"
        )
    return DailyGridField(
        variable=hist.variable,
        lat0=hist.lat0,
        dlat=hist.dlat,
        lon0=hist.lon0,
        dlon=hist.dlon,
        t0=hist.t0,
        values=np.concatenate([hist.values, scen.values], axis=0),
    )


def _slice_years(field: DailyGridField, years: tuple[int, int]) -> DailyGridField:
    import datetime as dt

    first = dt.date(years[0], 1, 1)
    last = dt.date(years[1], 12, 31)
    i0 = (first - field.t0).days
    i1 = (last - field.t0).days + 1
    if i0 < 0 or i1 > field.ntime:
        raise IngestError(
            f"grid spans {field.t0}..{field.date_of(field.ntime - 1)}, "
            f"cannot slice {years[0]}..{years[1]}"
        )
    return DailyGridField(
        variable=field.variable,
        lat0=field.lat0,
        dlat=field.dlat,
        lon0=field.lon0,
        dlon=field.dlon,
        t0=first,
        values=field.values[i0:i1],
    )


def model_spring_frequency(
    entry: ModelEntry,
    regions: list[str],
    region_map: RegionMap,
    extreme_config: ExtremeConfig,
    spring_stat: str = "mean",
    threshold_years: tuple[int, int] = (2000, 2023),
    regional_how: str = "mean",
) -> ModelSpringFrequency:
    """Springtime heatwave frequency 2015..2100 for one registry entry.

    csv entries carry precomputed regional monthly frequencies; grid1
    entries derive them from the model's own temperatures, with the
    threshold climatology built on the model's 2000..2023 days
    (historical run concatenated with the scenario's early years).
    """
    scen_years = (SCENARIO_WINDOW.start_year, SCENARIO_WINDOW.end_year)
    if entry.fmt == "csv":
        by_region_monthly = load_regional_frequency_csv(entry.series_path, SCENARIO_WINDOW)
        missing = [r for r in regions if r not in by_region_monthly]
        if missing:
            raise IngestError(f"{entry.series_path}: missing regions {missing}")
        years_ref: np.ndarray | None = None
        by_region: dict[str, np.ndarray] = {}
        for region in regions:
            years, values = spring_yearly(by_region_monthly[region], stat=spring_stat)
            if years_ref is None:
                years_ref = years
            by_region[region] = values
        assert years_ref is not None
        return ModelSpringFrequency(
            model=entry.model, scenario=entry.scenario, years=years_ref, by_region=by_region
        )

    hist = load_grid(entry.historical_path, GridVariable.T2M)
    scen = load_grid(entry.series_path, GridVariable.T2M)
    joined = _concat_fields(hist, scen)
    base = _slice_years(joined, threshold_years)
    calendar = build_thresholds(base, extreme_config)
    future = _slice_years(joined, scen_years)
    daymask = classify_days(future, calendar, EventKind.HEATWAVE)
    freq = monthly_frequency(daymask, future.lats(), future.lons())
    by_region = {}
    years_ref = None
    for region in regions:
        series = regional_frequency(freq, region_map, region, how=regional_how)
        years, values = spring_yearly(series, stat=spring_stat)
        if years_ref is None:
            years_ref = years
        by_region[region] = values
    assert years_ref is not None
    return ModelSpringFrequency(
        model=entry.model, scenario=entry.scenario, years=years_ref, by_region=by_region
    )


@dataclass
class ScenarioProjection:
    """Ensemble of per-model springtime frequency and projected outages."""

    scenario: Scenario
    years: np.ndarray
    models: tuple[str, ...]
    regions: tuple[str, ...]
    freq: np.ndarray  # (n_models, n_regions, n_years)
    pon: np.ndarray   # same shape, clipped at zero

    def _envelope(self, block: np.ndarray, region: str | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if region is None:
            data = block.mean(axis=1)  # average across regions first
        else:
            data = block[:, self.regions.index(region), :]
        return data.mean(axis=0), data.min(axis=0), data.max(axis=0)

    def freq_envelope(self, region: str | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self._envelope(self.freq, region)

    def pon_envelope(self, region: str | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self._envelope(self.pon, region)


@dataclass
class ProjectionEnsemble:
    by_scenario: dict[Scenario, ScenarioProjection]


def project_ensemble(
    model_freqs: list[ModelSpringFrequency],
    fits: dict[str, RegionalFit],
) -> ProjectionEnsemble:
    """Push every model through every eligible region's fitted line.

    Models fold in sorted name order per scenario.  Raises when a
    scenario has zero contributing models or when member year axes
    disagree.
    """
    eligible = sorted(region for region, fit in fits.items() if fit.eligible)
    if not eligible:
        raise ValueError("no region passed the regression eligibility test")
    by_scenario: dict[Scenario, ScenarioProjection] = {}
    scenarios = sorted(
        {mf.scenario for mf in model_freqs}, key=lambda s: s.value
    )
    for scenario in scenarios:
        members = sorted(
            (mf for mf in model_freqs if mf.scenario is scenario), key=lambda m: m.model
        )
        if not members:
            raise ValueError(f"scenario {scenario.value} has zero models")
        years = members[0].years
        for m in members:
            if not np.array_equal(m.years, years):
                raise ValueError(
                    f"model {m.model} ({scenario.value}) has a different year axis"
                )
        n_models, n_regions, n_years = len(members), len(eligible), years.shape[0]
        freq = np.empty((n_models, n_regions, n_years))
        pon = np.empty_like(freq)
        for i, member in enumerate(members):
            for j, region in enumerate(eligible):
                if region not in member.by_region:
                    raise ValueError(
                        f"model {member.model} lacks region {region} frequencies"
                    )
                f = member.by_region[region]
                freq[i, j] = f
                pon[i, j] = np.maximum(fits[region].model.predict(f), 0.0)
        by_scenario[scenario] = ScenarioProjection(
            scenario=scenario,
            years=years.copy(),
            models=tuple(m.model for m in members),
            regions=tuple(eligible),
            freq=freq,
            pon=pon,
        )
    return ProjectionEnsemble(by_scenario=by_scenario)


def future_amplified_ratios(
    ensemble: ProjectionEnsemble,
    observed_spring_freq: dict[str, tuple[np.ndarray, np.ndarray]],
    observed_spring_pon: dict[str, tuple[np.ndarray, np.ndarray]],
    baseline_years: tuple[int, int] = (2000, 2023),
    periods: dict[str, tuple[int, int]] | None = None,
) -> list[AmplifiedRatio]:
    """Projected-versus-observed springtime change per scenario and period.

    delta_days compares the ensemble-mean frequency over the period with
    the observed baseline mean; pon_ratio divides the ensemble-mean
    projected outage level by the observed baseline outage mean.
    """
    periods = periods if periods is not None else DEFAULT_PERIODS
    out: list[AmplifiedRatio] = []
    for scenario in sorted(ensemble.by_scenario, key=lambda s: s.value):
        proj = ensemble.by_scenario[scenario]
        for period_name, period in sorted(periods.items()):
            sel = (proj.years >= period[0]) & (proj.years <= period[1])
            if not sel.any():
                raise ValueError(f"projection years do not cover {period_name} {period}")
            for j, region in enumerate(proj.regions):
                fy, fv = observed_spring_freq[region]
                py, pv = observed_spring_pon[region]
                base_freq = _period_mean(fy, fv, baseline_years)
                base_pon = _period_mean(py, pv, baseline_years)
                freq_mean = float(proj.freq[:, j, sel].mean(axis=0).mean())
                pon_mean = float(proj.pon[:, j, sel].mean(axis=0).mean())
                zero = base_pon == 0.0
                out.append(
                    AmplifiedRatio(
                        region=region,
                        period=period_name,
                        scenario=scenario.value,
                        delta_days=freq_mean - base_freq,
                        pon_ratio=np.nan if zero else pon_mean / base_pon,
                        baseline_zero=zero,
                    )
                )
    return out
