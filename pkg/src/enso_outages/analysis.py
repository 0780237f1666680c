"""Relating climate-index state to outage counts and extreme-day grids.

Four analysis families live here, all operating on preprocessed
(smoothed-stage) monthly series over a common window:

* phase composites: each season's outage months are grouped by the ENSO
  phase read from the index three months per season earlier (La Nina
  below -0.5, El Nino above +0.5, Neutral between), and the groups are
  compared with one-way ANOVA plus Tukey's HSD;
* index/outage correlation tables: for sign-restricted index proxies
  (the La Nina-side excursions), the extremal lagged correlation against
  each region's outage series within a season;
* delay curves: the full cross-correlation as a function of lag;
* mediation maps: per grid cell, the chain "stronger cold-state index ->
  more extreme days -> more outages" holds where the index/extreme link
  is significantly negative and the extreme/outage link significantly
  positive.

Seasonal, sign-restricted correlations are computed over explicitly
constructed sample pairs (proxy at t-k, target at t) with plain Pearson
correlation, because the sign restriction breaks the contiguity that the
full-series lagged correlation assumes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import special

from .calendars import SEASON_LAG_MONTHS, SEASON_MONTHS
from .errors import DegenerateSeriesError
from .extremes import EventKind, ExtremeFrequencySeries
from .ingest.indices import IndexKind
from .ingest.regions import RegionMap
from .stats import (
    AnovaResult,
    CorrelationResult,
    HsdResult,
    anova,
    cc_significance,
    iter_lags_tiebreak_order,
    lagged_cc,
    max_cc,
    pearson,
    pearson_columns,
    tukey_hsd,
)
from .timeseries import MonthlyTimeSeries, Stage, preprocess_matrix

LA_NINA_THRESHOLD = -0.5
EL_NINO_THRESHOLD = 0.5

DEFAULT_MAX_LAG_SCAN = (0, 12)
DEFAULT_DELAY_RANGE = (-12, 12)
DEFAULT_MIN_PAIRS = 8


class Phase(enum.Enum):
    LA_NINA = "LaNina"
    EL_NINO = "ElNino"
    NEUTRAL = "Neutral"


PHASE_ORDER = (Phase.LA_NINA, Phase.EL_NINO, Phase.NEUTRAL)


def _require_smoothed(x: MonthlyTimeSeries, name: str) -> None:
    if x.stage is not Stage.SMOOTHED:
        raise ValueError(f"{name} must be a smoothed-stage series, got {x.stage.value}")


def _require_aligned(a: MonthlyTimeSeries, b: MonthlyTimeSeries, what: str) -> None:
    if a.start != b.start or len(a) != len(b):
        raise ValueError(f"{what}: series windows differ ({a.start}/{len(a)} vs {b.start}/{len(b)})")


def season_month_mask(series: MonthlyTimeSeries, season: str) -> np.ndarray:
    if season not in SEASON_MONTHS:
        raise ValueError(f"unknown season {season!r}")
    months = series.month_numbers()
    return np.isin(months, SEASON_MONTHS[season])


def classify_phase(index: MonthlyTimeSeries) -> list[Phase]:
    """Phase label per month: strict +/-0.5 thresholds, invalid -> Neutral."""
    _require_smoothed(index, "classify_phase index")
    out = []
    for t in range(len(index)):
        v = index.values[t]
        if not index.valid_mask[t] or not np.isfinite(v):
            out.append(Phase.NEUTRAL)
        elif v < LA_NINA_THRESHOLD:
            out.append(Phase.LA_NINA)
        elif v > EL_NINO_THRESHOLD:
            out.append(Phase.EL_NINO)
        else:
            out.append(Phase.NEUTRAL)
    return out


def phase_for_outage(year: int, month: int, index: MonthlyTimeSeries) -> Phase:
    """Phase governing an outage month: the index read one season-lag back.

    The lag is 3 months for MAM, 6 for JJA, 9 for SON, 0 for DJF (the
    winter itself).  A Neutral reading at the lag defers to a non-Neutral
    phase within +/- 1 month; if the two neighbors disagree, the one with
    the larger absolute index value wins.  Raises when the lagged month
    precedes the series start.
    """
    from .calendars import season_of_month

    season = season_of_month(month)
    lag = SEASON_LAG_MONTHS[season]
    t = index.index_of(year, month)
    s = t - lag
    if s < 0:
        raise ValueError(
            f"phase lookback for {year}-{month:02d} ({season}, lag {lag}) "
            "precedes the index series start"
        )
    phases = classify_phase(index)
    if phases[s] is not Phase.NEUTRAL:
        return phases[s]
    candidates = []
    for off in (-1, 1):
        u = s + off
        if 0 <= u < len(index) and index.valid_mask[u] and phases[u] is not Phase.NEUTRAL:
            candidates.append((abs(float(index.values[u])), phases[u]))
    if not candidates:
        return Phase.NEUTRAL
    distinct = {p for _, p in candidates}
    if len(distinct) == 1:
        return candidates[0][1]
    return max(candidates, key=lambda c: c[0])[1]


@dataclass
class CompositeResult:
    season: str
    phases: tuple[Phase, ...]
    group_means: dict[Phase, float]
    group_sizes: dict[Phase, int]
    anova: AnovaResult
    hsd: HsdResult
    n_skipped: int

    def pair_significant(self, a: Phase, b: Phase) -> bool:
        return self.hsd.pair(self.phases.index(a), self.phases.index(b)).significant


def composite_pon_by_phase(
    pon: MonthlyTimeSeries,
    index: MonthlyTimeSeries,
    season: str,
    alpha: float = 0.05,
) -> CompositeResult:
    """Group one season's outage anomalies by lagged phase and compare.

    Sample months that cannot be labeled (smoothing endpoints, or a
    lookback falling before the series start) are skipped and counted.
    Raises when any phase group ends up with fewer than 2 samples.
    """
    _require_smoothed(pon, "composite pon")
    _require_smoothed(index, "composite index")
    _require_aligned(pon, index, "composite")
    in_season = season_month_mask(pon, season)
    months = pon.month_numbers()
    years = pon.year_numbers()
    samples: dict[Phase, list[float]] = {p: [] for p in PHASE_ORDER}
    skipped = 0
    for t in range(len(pon)):
        if not in_season[t] or not pon.valid_mask[t]:
            skipped += in_season[t] and not pon.valid_mask[t]
            continue
        try:
            phase = phase_for_outage(int(years[t]), int(months[t]), index)
        except ValueError:
            skipped += 1
            continue
        samples[phase].append(float(pon.values[t]))
    for phase in PHASE_ORDER:
        if len(samples[phase]) < 2:
            raise ValueError(
                f"{season}: phase group {phase.value} has {len(samples[phase])} samples, "
                "need at least 2"
            )
    groups = [samples[p] for p in PHASE_ORDER]
    res = anova(groups)
    hsd = tukey_hsd(groups, alpha=alpha)
    return CompositeResult(
        season=season,
        phases=PHASE_ORDER,
        group_means={p: float(np.mean(samples[p])) for p in PHASE_ORDER},
        group_sizes={p: len(samples[p]) for p in PHASE_ORDER},
        anova=res,
        hsd=hsd,
        n_skipped=int(skipped),
    )


class SignConvention(enum.Enum):
    NEGATIVE = "negative"
    POSITIVE = "positive"


# La Nina side of each index: SST-based indices and the MEI go negative,
# the SOI goes positive.
PROXY_SIGN: dict[IndexKind, SignConvention] = {
    IndexKind.MEI: SignConvention.NEGATIVE,
    IndexKind.NINO34: SignConvention.NEGATIVE,
    IndexKind.NINO3: SignConvention.NEGATIVE,
    IndexKind.NINO4: SignConvention.NEGATIVE,
    IndexKind.SOI: SignConvention.POSITIVE,
}


@dataclass(frozen=True)
class IntensityProxy:
    """A smoothed index restricted to its La Nina-side excursions."""

    kind: IndexKind
    sign: SignConvention
    series: MonthlyTimeSeries

    @classmethod
    def from_series(
        cls, kind: IndexKind, series: MonthlyTimeSeries, sign: SignConvention | None = None
    ) -> "IntensityProxy":
        _require_smoothed(series, f"{kind.value} proxy")
        return cls(kind=kind, sign=sign if sign is not None else PROXY_SIGN[kind], series=series)

    @property
    def label(self) -> str:
        return self.kind.value + ("-" if self.sign is SignConvention.NEGATIVE else "+")

    def qualifying_mask(self) -> np.ndarray:
        """True where the month carries a usable sign-restricted value."""
        v = self.series.values
        with np.errstate(invalid="ignore"):
            side = v < 0.0 if self.sign is SignConvention.NEGATIVE else v > 0.0
        return self.series.valid_mask & np.isfinite(v) & side


def lagged_pairs(
    proxy: IntensityProxy,
    y: MonthlyTimeSeries,
    k: int,
    season: str | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample pairs (proxy at t-k, y at t) for t in the season.

    Months where either side is invalid, or the proxy is on the wrong
    side of zero, drop out; no alignment padding is ever invented.
    Negative k pairs y with a later proxy value, which only makes sense
    for diagnostic delay curves.
    """
    _require_aligned(proxy.series, y, "lagged_pairs")
    T = len(y)
    if abs(k) >= T:
        return np.empty(0), np.empty(0)
    ok_proxy = proxy.qualifying_mask()
    t_idx = np.arange(max(0, k), T + min(0, k))
    keep = y.valid_mask[t_idx] & ok_proxy[t_idx - k]
    if season is not None:
        keep &= season_month_mask(y, season)[t_idx]
    t_sel = t_idx[keep]
    return proxy.series.values[t_sel - k], y.values[t_sel]


def best_conditional_cc(
    proxy: IntensityProxy,
    y: MonthlyTimeSeries,
    season: str | None,
    lag_range: tuple[int, int] = DEFAULT_MAX_LAG_SCAN,
    mode: str = "most_negative",
    min_samples: int = DEFAULT_MIN_PAIRS,
) -> CorrelationResult | None:
    """Extremal Pearson correlation of seasonal sign-restricted pairs.

    Lags with fewer than min_samples pairs (or a degenerate sample) are
    skipped; returns None when every lag is skipped.  Ties prefer the
    smaller lag, as in max_cc.
    """
    if mode not in ("max_abs", "most_negative", "most_positive"):
        raise ValueError(f"unknown mode {mode!r}")
    if lag_range[0] < 0:
        raise ValueError("sign-restricted scans use non-negative lags")
    best: tuple[float, int, int] | None = None
    for k in iter_lags_tiebreak_order(lag_range):
        xs, ys = lagged_pairs(proxy, y, k, season)
        if xs.shape[0] < min_samples:
            continue
        try:
            r = pearson(xs, ys)
        except DegenerateSeriesError:
            continue
        if best is None:
            best = (r, k, xs.shape[0])
            continue
        if mode == "max_abs":
            better = abs(r) > abs(best[0])
        elif mode == "most_negative":
            better = r < best[0]
        else:
            better = r > best[0]
        if better:
            best = (r, k, xs.shape[0])
    if best is None:
        return None
    r, k, n = best
    return CorrelationResult(
        r=float(r),
        lag=int(k),
        n_samples=int(n),
        p_value=cc_significance(float(r), int(n)),
        degenerate=abs(r) >= 1.0,
    )


@dataclass(frozen=True)
class CcTableRow:
    region: str
    proxy_label: str
    result: CorrelationResult | None


@dataclass
class CcTable:
    season: str
    mode: str
    lag_range: tuple[int, int]
    rows: list[CcTableRow]

    def significant_count(self, proxy_label: str, alpha: float = 0.05) -> tuple[int, int]:
        hits = 0
        total = 0
        for row in self.rows:
            if row.proxy_label != proxy_label:
                continue
            total += 1
            if row.result is not None and row.result.significant(alpha):
                hits += 1
        return hits, total

    def majority_significant(self, proxy_label: str, alpha: float = 0.05) -> bool:
        hits, total = self.significant_count(proxy_label, alpha)
        return total > 0 and hits * 2 > total


def region_index_cc_table(
    proxies: list[IntensityProxy],
    pon_by_region: dict[str, MonthlyTimeSeries],
    season: str,
    lag_range: tuple[int, int] = DEFAULT_MAX_LAG_SCAN,
    mode: str = "most_negative",
    min_samples: int = DEFAULT_MIN_PAIRS,
) -> CcTable:
    """Extremal conditional correlation for every (region, proxy) pair.

    Regions where a proxy yields no computable lag carry result None
    rather than a fabricated value.
    """
    rows = []
    for region, pon in pon_by_region.items():
        _require_smoothed(pon, f"pon[{region}]")
        for proxy in proxies:
            rows.append(
                CcTableRow(
                    region=region,
                    proxy_label=proxy.label,
                    result=best_conditional_cc(
                        proxy, pon, season, lag_range=lag_range, mode=mode,
                        min_samples=min_samples,
                    ),
                )
            )
    return CcTable(season=season, mode=mode, lag_range=lag_range, rows=rows)


def _common_valid_slice(x: MonthlyTimeSeries, y: MonthlyTimeSeries) -> tuple[np.ndarray, np.ndarray]:
    both = x.valid_mask & y.valid_mask
    idx = np.flatnonzero(both)
    if idx.size == 0:
        raise DegenerateSeriesError("no overlapping valid samples")
    lo, hi = idx[0], idx[-1]
    if not both[lo : hi + 1].all():
        raise ValueError("valid spans are not contiguous; cannot form a lagged series")
    return x.values[lo : hi + 1], y.values[lo : hi + 1]


def delay_curve(
    x: MonthlyTimeSeries,
    y: MonthlyTimeSeries,
    lag_range: tuple[int, int] = DEFAULT_DELAY_RANGE,
) -> list[CorrelationResult]:
    """Full-series lagged correlation at every lag in the range.

    Both series are cut to their common contiguous valid interior first.
    Lags leaving fewer than 3 overlapping samples are omitted.  The curve
    satisfies R_xy(k) = R_yx(-k).
    """
    _require_aligned(x, y, "delay_curve")
    xa, ya = _common_valid_slice(x, y)
    T = xa.shape[0]
    out = []
    for k in range(lag_range[0], lag_range[1] + 1):
        if abs(k) > T - 3:
            continue
        r = lagged_cc(xa, ya, k, norm="full")
        n = T - abs(k)
        out.append(
            CorrelationResult(
                r=float(r), lag=int(k), n_samples=int(n),
                p_value=cc_significance(float(r), int(n)),
                degenerate=abs(r) >= 1.0,
            )
        )
    return out


def series_max_cc(
    x: MonthlyTimeSeries,
    y: MonthlyTimeSeries,
    lag_range: tuple[int, int] = DEFAULT_DELAY_RANGE,
    mode: str = "max_abs",
) -> CorrelationResult:
    """max_cc over the common contiguous valid interior of two series."""
    _require_aligned(x, y, "series_max_cc")
    xa, ya = _common_valid_slice(x, y)
    return max_cc(xa, ya, lag_range=lag_range, mode=mode)


def _p_from_r_n(r: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Vectorized two-sided t-test p-values; NaN r or n < 4 give NaN."""
    r = np.asarray(r, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    p = np.full(r.shape, np.nan)
    ok = np.isfinite(r) & (n >= 4) & (np.abs(r) < 1.0)
    if ok.any():
        df = n[ok] - 2.0
        r2 = r[ok] ** 2
        t2 = r2 * df / (1.0 - r2)
        p[ok] = special.betainc(df / 2.0, 0.5, df / (df + t2))
    exact = np.isfinite(r) & (n >= 4) & (np.abs(r) >= 1.0)
    p[exact] = 0.0
    return p


@dataclass
class MediationMap:
    """Per-cell two-link mediation scan for one event kind and season.

    Link 1 is the sign-restricted index against the cell's extreme-day
    anomaly (evaluated at its most negative lag); link 2 the cell's
    anomaly against the target outage series (most positive lag).  flag
    is True where link 1 is significantly negative and link 2
    significantly positive.
    """

    kind: EventKind
    season: str
    proxy_label: str
    alpha: float
    lats: np.ndarray
    lons: np.ndarray
    region_index: np.ndarray
    region_order: tuple[str, ...]
    evaluated: np.ndarray
    r1: np.ndarray
    k1: np.ndarray
    p1: np.ndarray
    n1: np.ndarray
    r2: np.ndarray
    k2: np.ndarray
    p2: np.ndarray
    n2: np.ndarray
    flag: np.ndarray
    skipped_no_region: int


def _scan_link(
    x_by_lag: dict[int, np.ndarray],
    Y_by_lag: dict[int, np.ndarray],
    lag_order: list[int],
    min_samples: int,
    mode: str,
    n_cells: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Columnwise extremal Pearson scan over lags; returns (r, k, n)."""
    best_r = np.full(n_cells, np.nan)
    best_k = np.full(n_cells, -1, dtype=np.int64)
    best_n = np.zeros(n_cells, dtype=np.int64)
    for k in lag_order:
        x = x_by_lag.get(k)
        if x is None or x.shape[0] < min_samples:
            continue
        r = pearson_columns(x, Y_by_lag[k])
        fresh = np.isnan(best_r) & ~np.isnan(r)
        if mode == "most_negative":
            better = ~np.isnan(r) & ~np.isnan(best_r) & (r < best_r)
        elif mode == "most_positive":
            better = ~np.isnan(r) & ~np.isnan(best_r) & (r > best_r)
        else:
            better = ~np.isnan(r) & ~np.isnan(best_r) & (np.abs(r) > np.abs(best_r))
        take = fresh | better
        best_r[take] = r[take]
        best_k[take] = k
        best_n[take] = x.shape[0]
    return best_r, best_k, best_n


def mediation_maps(
    proxy: IntensityProxy,
    freq: ExtremeFrequencySeries,
    pon_by_region: dict[str, MonthlyTimeSeries],
    region_map: RegionMap,
    season: str,
    lag_range: tuple[int, int] = DEFAULT_MAX_LAG_SCAN,
    alpha: float = 0.05,
    min_samples: int = DEFAULT_MIN_PAIRS,
    climatology: tuple[int, int] | None = None,
    target: str = "region",
    pon_all_us: MonthlyTimeSeries | None = None,
) -> MediationMap:
    """Scan every valid grid cell for the index -> extremes -> outages chain.

    Cell frequencies are preprocessed (detrended, de-seasonalized,
    smoothed) in place.  target="region" pairs each cell with its own
    region's outage series; cells outside every region are skipped.
    target="all_us" pairs every cell with the national series.
    """
    if target not in ("region", "all_us"):
        raise ValueError(f"unknown mediation target {target!r}")
    if lag_range[0] < 0:
        raise ValueError("mediation scans use non-negative lags")
    probe = MonthlyTimeSeries(np.zeros(freq.n_months), freq.start)
    T = len(probe)
    nlat, nlon = freq.counts.shape[1], freq.counts.shape[2]
    n_cells = nlat * nlon

    proc, time_valid = preprocess_matrix(
        freq.counts.reshape(T, n_cells), freq.start, climatology
    )
    in_season = season_month_mask(probe, season)
    ok_proxy = proxy.qualifying_mask()
    _require_aligned(proxy.series, probe, "mediation proxy")

    lag_order = iter_lags_tiebreak_order(lag_range)

    # Link 1: proxy(t-k) vs cell anomaly(t); the pair set is cell-independent.
    x1_by_lag: dict[int, np.ndarray] = {}
    Y1_by_lag: dict[int, np.ndarray] = {}
    for k in lag_order:
        t_idx = np.arange(k, T)
        keep = in_season[t_idx] & time_valid[t_idx] & ok_proxy[t_idx - k]
        t_sel = t_idx[keep]
        if t_sel.size:
            x1_by_lag[k] = proxy.series.values[t_sel - k]
            Y1_by_lag[k] = proc[t_sel, :]
    r1, k1, n1 = _scan_link(x1_by_lag, Y1_by_lag, lag_order, min_samples, "most_negative", n_cells)
    p1 = _p_from_r_n(r1, n1)

    # Link 2: cell anomaly(t-k) vs outage series(t); pair sets shared per
    # target series, so scan once per region (or once for all_us).
    region_idx = region_map.region_index_grid(freq.lats, freq.lons).reshape(n_cells)
    r2 = np.full(n_cells, np.nan)
    k2 = np.full(n_cells, -1, dtype=np.int64)
    n2 = np.zeros(n_cells, dtype=np.int64)
    skipped_no_region = 0

    def scan_target(pon: MonthlyTimeSeries, cells: np.ndarray) -> None:
        _require_smoothed(pon, "mediation pon")
        _require_aligned(pon, probe, "mediation pon")
        x2_by_lag: dict[int, np.ndarray] = {}
        Y2_by_lag: dict[int, np.ndarray] = {}
        for k in lag_order:
            t_idx = np.arange(k, T)
            keep = in_season[t_idx] & pon.valid_mask[t_idx] & time_valid[t_idx - k]
            t_sel = t_idx[keep]
            if t_sel.size:
                x2_by_lag[k] = pon.values[t_sel]
                Y2_by_lag[k] = proc[t_sel - k, :][:, cells]
        r, k_arr, n = _scan_link(
            x2_by_lag, Y2_by_lag, lag_order, min_samples, "most_positive", int(cells.sum())
        )
        r2[cells] = r
        k2[cells] = k_arr
        n2[cells] = n

    if target == "all_us":
        if pon_all_us is None:
            raise ValueError("target='all_us' needs the national outage series")
        scan_target(pon_all_us, np.ones(n_cells, dtype=bool))
    else:
        for idx, region in enumerate(region_map.region_order):
            cells = region_idx == idx
            if not cells.any():
                continue
            if region not in pon_by_region:
                continue
            scan_target(pon_by_region[region], cells)
        skipped_no_region = int((region_idx < 0).sum())

    p2 = _p_from_r_n(r2, n2)
    evaluated = ~np.isnan(r1) & ~np.isnan(r2)
    with np.errstate(invalid="ignore"):
        flag = (
            evaluated
            & (r1 < 0.0)
            & (p1 < alpha)
            & (r2 > 0.0)
            & (p2 < alpha)
        )
    shape = (nlat, nlon)
    return MediationMap(
        kind=freq.kind,
        season=season,
        proxy_label=proxy.label,
        alpha=alpha,
        lats=freq.lats.copy(),
        lons=freq.lons.copy(),
        region_index=region_idx.reshape(shape),
        region_order=region_map.region_order,
        evaluated=evaluated.reshape(shape),
        r1=r1.reshape(shape),
        k1=k1.reshape(shape),
        p1=p1.reshape(shape),
        n1=n1.reshape(shape),
        r2=r2.reshape(shape),
        k2=k2.reshape(shape),
        p2=p2.reshape(shape),
        n2=n2.reshape(shape),
        flag=flag.reshape(shape),
        skipped_no_region=skipped_no_region,
    )
