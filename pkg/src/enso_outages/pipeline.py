"""Deterministic staged pipeline and its artifact formats.

Stages and their dependencies:

    ingest     -> (nothing)
    extremes   -> ingest
    correlate  -> ingest, extremes
    composite  -> ingest
    mediate    -> ingest, extremes
    project    -> ingest, extremes

Each stage writes its artifacts into out_dir/<stage>/ through a
temporary directory that is renamed into place only when the stage
finishes, so an interrupted run never leaves a half-written stage.
Artifacts contain no timestamps, hostnames, or iteration-order
dependence: rerunning the same config and seed reproduces every byte.
A manifest.json at the output root records the package version, the
config echo, SHA-256 digests of all inputs, and digests of every
artifact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .analysis import (
    CcTable,
    CompositeResult,
    IntensityProxy,
    MediationMap,
    Phase,
    best_conditional_cc,
    composite_pon_by_phase,
    lagged_pairs,
    mediation_maps,
    region_index_cc_table,
)
from .calendars import format_year_month
from .config import Issue, RunConfig, validate_config
from .errors import ConfigError, StageDependencyError
from .extremes import (
    EventKind,
    ExtremeFrequencySeries,
    build_thresholds,
    classify_days,
    monthly_frequency,
    regional_frequency_table,
)
from .ingest.gridio import DailyGridField, GridVariable, load_grid, write_grid1
from .ingest.indices import IndexKind, load_index_table
from .ingest.models import Scenario, load_model_registry
from .ingest.records import (
    RegionalPon,
    exclude_sparse_regions,
    monthly_pon,
    parse_outage_records,
    serialize_records,
)
from .ingest.regions import RegionMap
from .projection import (
    fit_regional_model,
    future_amplified_ratios,
    historical_amplification,
    model_spring_frequency,
    project_ensemble,
    spring_yearly,
)
from .stats import CorrelationResult, pearson
from .timeseries import MonthlyTimeSeries, preprocess

log = logging.getLogger(__name__)

STAGES = ("ingest", "extremes", "correlate", "composite", "mediate", "project")

STAGE_DEPS: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "extremes": ("ingest",),
    "correlate": ("ingest", "extremes"),
    "composite": ("ingest",),
    "mediate": ("ingest", "extremes"),
    "project": ("ingest", "extremes"),
}

SEASON_KINDS: dict[str, tuple[EventKind, ...]] = {
    "MAM": (EventKind.COLD_SNAP, EventKind.HEATWAVE, EventKind.EXTREME_PRECIP),
    "JJA": (EventKind.HEATWAVE,),
    "DJF": (EventKind.EXTREME_PRECIP,),
}

MEDIATION_ARTIFACTS: dict[tuple[str, EventKind], str] = {
    ("MAM", EventKind.COLD_SNAP): "fig2def_mediation_cold_snap.csv",
    ("MAM", EventKind.HEATWAVE): "fig2def_mediation_heatwave.csv",
    ("MAM", EventKind.EXTREME_PRECIP): "fig2def_mediation_extreme_precip.csv",
    ("JJA", EventKind.HEATWAVE): "fig3d_mediation_heatwave.csv",
    ("DJF", EventKind.EXTREME_PRECIP): "fig3h_mediation_extreme_precip.csv",
}

ALL_US = "ALL"


def _fmt(v: object) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return "" if not np.isfinite(f) else f"{f:.12g}"
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    import csv

    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return "sha256:" + h.hexdigest()


def _season_index_kind(cfg: RunConfig, season: str) -> IndexKind:
    name = {
        "MAM": cfg.analysis.spring_index,
        "JJA": cfg.analysis.summer_index,
        "DJF": cfg.analysis.winter_index,
        "SON": cfg.analysis.spring_index,
    }[season]
    return IndexKind.parse(name)


class PipelineContext:
    """Lazy caches for inputs shared by several stages of one run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self._cache: dict[str, object] = {}

    def region_map(self) -> RegionMap:
        if "region_map" not in self._cache:
            self._cache["region_map"] = self.cfg.region_map()
        return self._cache["region_map"]  # type: ignore[return-value]

    def index_raw(self, kind: IndexKind) -> MonthlyTimeSeries:
        key = f"index_raw:{kind.value}"
        if key not in self._cache:
            path = self.cfg.index_tables.get(kind.value)
            if path is None:
                raise ConfigError(f"no index table configured for {kind.value}")
            self._cache[key] = load_index_table(path, kind, self.cfg.window).series
        return self._cache[key]  # type: ignore[return-value]

    def index_smoothed(self, kind: IndexKind) -> MonthlyTimeSeries:
        key = f"index_smoothed:{kind.value}"
        if key not in self._cache:
            self._cache[key] = preprocess(self.index_raw(kind), self.cfg.climatology)
        return self._cache[key]  # type: ignore[return-value]

    def proxy(self, kind: IndexKind) -> IntensityProxy:
        return IntensityProxy.from_series(kind, self.index_smoothed(kind))

    # Artifacts of earlier stages, read back from disk so single-stage
    # runs never recompute a dependency silently.

    def pon_raw(self, out_dir: Path) -> RegionalPon:
        key = "pon_raw"
        if key not in self._cache:
            self._cache[key] = _read_pon_csv(out_dir / "ingest" / "pon_monthly.csv", self.cfg)
        return self._cache[key]  # type: ignore[return-value]

    def pon_smoothed(self, out_dir: Path) -> dict[str, MonthlyTimeSeries]:
        key = "pon_smoothed"
        if key not in self._cache:
            pon = self.pon_raw(out_dir)
            smoothed = {
                rid: preprocess(series, self.cfg.climatology)
                for rid, series in pon.by_region.items()
            }
            smoothed[ALL_US] = preprocess(pon.all_us, self.cfg.climatology)
            self._cache[key] = smoothed
        return self._cache[key]  # type: ignore[return-value]

    def eligible_regions(self, out_dir: Path) -> list[str]:
        key = "eligible_regions"
        if key not in self._cache:
            payload = json.loads(
                (out_dir / "ingest" / "eligible_regions.json").read_text(encoding="utf-8")
            )
            self._cache[key] = list(payload["eligible"])
        return self._cache[key]  # type: ignore[return-value]

    def frequency(self, out_dir: Path, kind: EventKind) -> ExtremeFrequencySeries:
        key = f"freq:{kind.value}"
        if key not in self._cache:
            path = out_dir / "extremes" / f"freq_{kind.value}.gr1"
            field = load_grid(path, GridVariable.T2M)
            self._cache[key] = ExtremeFrequencySeries(
                kind=kind,
                start=self.cfg.window.start,
                counts=field.values,
                cell_valid=field.cell_valid(),
                lats=field.lats(),
                lons=field.lons(),
            )
        return self._cache[key]  # type: ignore[return-value]


def _read_pon_csv(path: Path, cfg: RunConfig) -> RegionalPon:
    import csv

    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    window = cfg.window
    per_region: dict[str, np.ndarray] = {}
    for row in rows:
        region = row["region"]
        arr = per_region.setdefault(region, np.zeros(window.n_months))
        year, month = map(int, row["ym"].split("-"))
        arr[window.index_of(year, month)] = float(row["count"])
    all_us = per_region.pop(ALL_US)
    return RegionalPon(
        by_region={
            rid: MonthlyTimeSeries(vals, window.start) for rid, vals in per_region.items()
        },
        all_us=MonthlyTimeSeries(all_us, window.start),
    )


# --- stage bodies ---------------------------------------------------------


def _stage_ingest(ctx: PipelineContext, stage_dir: Path, out_dir: Path) -> dict:
    cfg = ctx.cfg
    result = parse_outage_records(cfg.outage_table, cfg.window)
    region_map = ctx.region_map()
    pon = monthly_pon(result.records, region_map, cfg.window)
    eligible = exclude_sparse_regions(pon, cfg.analysis.sparse_region_threshold)
    if not eligible:
        log.warning("every region fell below the sparse-event threshold")

    serialize_records(result.records, stage_dir / "records_clean.csv")
    rows = []
    for rid in list(pon.by_region) + [ALL_US]:
        series = pon.all_us if rid == ALL_US else pon.by_region[rid]
        for t in range(len(series)):
            y, m = series.year_month(t)
            rows.append((format_year_month(y, m), rid, series.values[t]))
    _write_csv(stage_dir / "pon_monthly.csv", ("ym", "region", "count"), rows)
    _write_json(
        stage_dir / "eligible_regions.json",
        {
            "eligible": eligible,
            "threshold": cfg.analysis.sparse_region_threshold,
            "totals": pon.totals(),
        },
    )
    # The index tables are read here so a broken input fails the run at
    # the ingest stage, not three stages later.
    for name in sorted(cfg.index_tables):
        ctx.index_raw(IndexKind.parse(name))
    _write_json(
        stage_dir / "ingest_summary.json",
        {
            "records": len(result.records),
            "rows_read": result.total_rows,
            "dropped": result.dropped,
            "drop_reasons": dict(sorted(result.drop_reasons.items())),
            "eligible_regions": eligible,
            "excluded_regions": [r for r in region_map.region_order if r not in eligible],
            "window": str(cfg.window),
        },
    )
    return {"records": len(result.records), "eligible_regions": eligible}


def _freq_to_field(freq: ExtremeFrequencySeries, cfg: RunConfig) -> DailyGridField:
    import datetime as dt

    return DailyGridField(
        variable=GridVariable.T2M,
        lat0=float(freq.lats[0]),
        dlat=float(freq.lats[1] - freq.lats[0]) if freq.lats.size > 1 else 0.5,
        lon0=float(freq.lons[0]),
        dlon=float(freq.lons[1] - freq.lons[0]) if freq.lons.size > 1 else 0.5,
        t0=dt.date(cfg.window.start_year, cfg.window.start_month, 1),
        values=freq.counts,
    )


def _stage_extremes(ctx: PipelineContext, stage_dir: Path, out_dir: Path) -> dict:
    cfg = ctx.cfg
    region_map = ctx.region_map()
    notes: dict[str, object] = {}
    freq_rows: list[tuple[object, ...]] = []
    for variable, path in (
        (GridVariable.T2M, cfg.t2m_grid),
        (GridVariable.PRECIP, cfg.precip_grid),
    ):
        field = load_grid(path, variable)
        calendar = build_thresholds(field, cfg.extremes)
        kinds = (
            (EventKind.HEATWAVE, EventKind.COLD_SNAP)
            if variable is GridVariable.T2M
            else (EventKind.EXTREME_PRECIP,)
        )
        for kind in kinds:
            daymask = classify_days(field, calendar, kind)
            freq = monthly_frequency(daymask, field.lats(), field.lons())
            write_grid1(_freq_to_field(freq, cfg), stage_dir / f"freq_{kind.value}.gr1")
            regional = regional_frequency_table(freq, region_map)
            for rid, series in regional.items():
                for t in range(len(series)):
                    y, m = series.year_month(t)
                    freq_rows.append(
                        (kind.value, format_year_month(y, m), rid, series.values[t])
                    )
            notes[kind.value] = {
                "flagged_days": int(np.nansum(freq.counts)),
                "valid_cells": int(freq.cell_valid.sum()),
            }
    _write_csv(stage_dir / "freq_regions.csv", ("kind", "ym", "region", "value"), freq_rows)
    return notes


def _cc_row(region: str, label: str, res: CorrelationResult | None, alpha: float) -> tuple:
    if res is None:
        return (region, label, None, None, None, None, False, False)
    return (
        region,
        label,
        res.r,
        res.lag,
        res.n_samples,
        res.p_value,
        res.significant(alpha),
        True,
    )


def _conditional_delay_curve(
    proxy: IntensityProxy,
    pon: MonthlyTimeSeries,
    season: str,
    lag_range: tuple[int, int],
    min_samples: int,
) -> list[CorrelationResult]:
    from .stats import cc_significance

    out = []
    for k in range(lag_range[0], lag_range[1] + 1):
        xs, ys = lagged_pairs(proxy, pon, k, season)
        if xs.shape[0] < min_samples:
            continue
        try:
            r = pearson(xs, ys)
        except Exception:
            continue
        out.append(
            CorrelationResult(
                r=float(r),
                lag=int(k),
                n_samples=int(xs.shape[0]),
                p_value=cc_significance(float(r), int(xs.shape[0])),
                degenerate=abs(r) >= 1.0,
            )
        )
    return out


def _conditional_permutation_p(
    proxy: IntensityProxy,
    pon: MonthlyTimeSeries,
    k: int,
    season: str,
    n_permutations: int,
    rng: np.random.Generator,
    min_samples: int,
) -> float | None:
    """Circular-rotation permutation p for one conditional correlation.

    The outage values rotate as a block (mask fixed), preserving their
    autocorrelation while breaking the pairing with the index.
    """
    xs, ys = lagged_pairs(proxy, pon, k, season)
    if xs.shape[0] < min_samples:
        return None
    try:
        r_obs = abs(pearson(xs, ys))
    except Exception:
        return None
    T = len(pon)
    exceed = 0
    done = 0
    for off in rng.integers(1, T, size=n_permutations):
        rolled = dataclasses.replace(
            pon,
            values=np.roll(pon.values, int(off)),
            valid_mask=np.roll(pon.valid_mask, int(off)),
        )
        xs_p, ys_p = lagged_pairs(proxy, rolled, k, season)
        if xs_p.shape[0] < 3:
            continue
        try:
            r_p = pearson(xs_p, ys_p)
        except Exception:
            continue
        done += 1
        if abs(r_p) >= r_obs:
            exceed += 1
    if done == 0:
        return None
    return (1 + exceed) / (done + 1)


def _stage_correlate(ctx: PipelineContext, stage_dir: Path, out_dir: Path) -> dict:
    cfg = ctx.cfg
    pon = ctx.pon_smoothed(out_dir)
    eligible = ctx.eligible_regions(out_dir)
    table_pon = {rid: pon[rid] for rid in eligible}
    table_pon[ALL_US] = pon[ALL_US]

    proxies = [ctx.proxy(IndexKind.parse(name)) for name in sorted(ctx.cfg.index_tables)]

    # Full per-season, per-index, per-region table.
    rows = []
    for season in ("MAM", "JJA", "SON", "DJF"):
        table: CcTable = region_index_cc_table(
            proxies,
            table_pon,
            season,
            lag_range=cfg.analysis.max_lag_scan,
            mode="most_negative",
            min_samples=cfg.analysis.min_pair_samples,
        )
        for row in table.rows:
            rows.append((season,) + _cc_row(row.region, row.proxy_label, row.result, cfg.analysis.alpha))
    _write_csv(
        stage_dir / "fig1c_cc_table.csv",
        ("season", "region", "index", "r", "lag", "n", "p", "significant", "computable"),
        rows,
    )

    # One headline index per season: the per-region map plus the all-US
    # delay curve, as in the spring/summer/winter figure rows.
    season_files = {
        "MAM": ("fig2a_region_cc.csv", "fig2c_delay_curve.csv"),
        "JJA": ("fig3a_region_cc.csv", "fig3c_delay_curve.csv"),
        "DJF": ("fig3e_region_cc.csv", "fig3g_delay_curve.csv"),
    }
    notes = {}
    for season, (map_name, curve_name) in season_files.items():
        proxy = ctx.proxy(_season_index_kind(cfg, season))
        map_rows = []
        for rid in list(eligible) + [ALL_US]:
            res = best_conditional_cc(
                proxy,
                table_pon[rid],
                season,
                lag_range=cfg.analysis.max_lag_scan,
                mode="most_negative",
                min_samples=cfg.analysis.min_pair_samples,
            )
            map_rows.append(_cc_row(rid, proxy.label, res, cfg.analysis.alpha))
            if rid == ALL_US and res is not None:
                notes[f"{season}_all_us"] = {
                    "index": proxy.label,
                    "r": res.r,
                    "lag": res.lag,
                    "p": res.p_value,
                }
        _write_csv(
            stage_dir / map_name,
            ("region", "index", "r", "lag", "n", "p", "significant", "computable"),
            map_rows,
        )

        curve = _conditional_delay_curve(
            proxy,
            table_pon[ALL_US],
            season,
            cfg.analysis.delay_curve_range,
            cfg.analysis.min_pair_samples,
        )
        header = ["index", "lag", "r", "n", "p", "significant"]
        curve_rows = []
        season_tag = {"MAM": 1, "JJA": 2, "SON": 3, "DJF": 4}[season]
        perm_rng = np.random.default_rng([cfg.seed, season_tag])
        if cfg.analysis.emit_permutation_p:
            header.append("p_perm")
        for res in curve:
            row = [
                proxy.label,
                res.lag,
                res.r,
                res.n_samples,
                res.p_value,
                res.significant(cfg.analysis.alpha),
            ]
            if cfg.analysis.emit_permutation_p:
                row.append(
                    _conditional_permutation_p(
                        proxy,
                        table_pon[ALL_US],
                        res.lag,
                        season,
                        cfg.analysis.permutations,
                        perm_rng,
                        cfg.analysis.min_pair_samples,
                    )
                )
            curve_rows.append(row)
        _write_csv(stage_dir / curve_name, header, curve_rows)
    return notes


def _stage_composite(ctx: PipelineContext, stage_dir: Path, out_dir: Path) -> dict:
    cfg = ctx.cfg
    pon_all = ctx.pon_smoothed(out_dir)[ALL_US]
    mei = ctx.index_smoothed(IndexKind.MEI)
    rows = []
    notes = {}
    for season in ("MAM", "JJA", "SON", "DJF"):
        try:
            comp: CompositeResult = composite_pon_by_phase(
                pon_all, mei, season, alpha=cfg.analysis.alpha
            )
        except ValueError as exc:
            log.warning("composite %s skipped: %s", season, exc)
            rows.append((season, None, None, None, None, None, None, None, None, str(exc)))
            continue
        for phase in comp.phases:
            rows.append(
                (
                    season,
                    phase.value,
                    comp.group_sizes[phase],
                    comp.group_means[phase],
                    comp.anova.f_stat,
                    comp.anova.p_value,
                    comp.pair_significant(Phase.LA_NINA, Phase.NEUTRAL),
                    comp.pair_significant(Phase.EL_NINO, Phase.NEUTRAL),
                    comp.pair_significant(Phase.LA_NINA, Phase.EL_NINO),
                    "",
                )
            )
        notes[season] = {
            "f": comp.anova.f_stat,
            "p": comp.anova.p_value,
            "la_nina_minus_neutral": comp.group_means[Phase.LA_NINA]
            - comp.group_means[Phase.NEUTRAL],
        }
    _write_csv(
        stage_dir / "fig1b_composites.csv",
        (
            "season",
            "phase",
            "n",
            "mean_pon_anomaly",
            "anova_f",
            "anova_p",
            "lanina_vs_neutral_significant",
            "elnino_vs_neutral_significant",
            "lanina_vs_elnino_significant",
            "note",
        ),
        rows,
    )
    return notes


def _mediation_rows(m: MediationMap) -> list[tuple]:
    rows = []
    for i in range(m.lats.shape[0]):
        for j in range(m.lons.shape[0]):
            region = m.region_index[i, j]
            rows.append(
                (
                    m.lats[i],
                    m.lons[j],
                    m.region_order[region] if region >= 0 else "",
                    m.evaluated[i, j],
                    m.r1[i, j],
                    int(m.k1[i, j]) if m.k1[i, j] >= 0 else None,
                    m.p1[i, j],
                    int(m.n1[i, j]),
                    m.r2[i, j],
                    int(m.k2[i, j]) if m.k2[i, j] >= 0 else None,
                    m.p2[i, j],
                    int(m.n2[i, j]),
                    m.flag[i, j],
                )
            )
    return rows


_MEDIATION_HEADER = (
    "lat",
    "lon",
    "region",
    "evaluated",
    "r1",
    "k1",
    "p1",
    "n1",
    "r2",
    "k2",
    "p2",
    "n2",
    "flag",
)


def _stage_mediate(ctx: PipelineContext, stage_dir: Path, out_dir: Path) -> dict:
    cfg = ctx.cfg
    region_map = ctx.region_map()
    pon = ctx.pon_smoothed(out_dir)
    eligible = ctx.eligible_regions(out_dir)
    pon_regions = {rid: pon[rid] for rid in eligible}
    notes = {}
    for season, kinds in SEASON_KINDS.items():
        proxy = ctx.proxy(_season_index_kind(cfg, season))
        for kind in kinds:
            freq = ctx.frequency(out_dir, kind)
            m = mediation_maps(
                proxy,
                freq,
                pon_regions,
                region_map,
                season,
                lag_range=cfg.analysis.max_lag_scan,
                alpha=cfg.analysis.alpha,
                min_samples=cfg.analysis.min_pair_samples,
                climatology=cfg.climatology,
                target=cfg.analysis.mediation_target,
                pon_all_us=pon[ALL_US],
            )
            name = MEDIATION_ARTIFACTS[(season, kind)]
            _write_csv(stage_dir / name, _MEDIATION_HEADER, _mediation_rows(m))
            notes[name] = {
                "flagged_cells": int(m.flag.sum()),
                "evaluated_cells": int(m.evaluated.sum()),
            }
    return notes


def _spring_table(
    series_by_region: dict[str, MonthlyTimeSeries], stat: str
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    return {rid: spring_yearly(s, stat=stat) for rid, s in series_by_region.items()}


def _stage_project(ctx: PipelineContext, stage_dir: Path, out_dir: Path) -> dict:
    cfg = ctx.cfg
    if cfg.model_registry is None:
        raise ConfigError("the project stage needs inputs.model_registry")
    region_map = ctx.region_map()
    pon = ctx.pon_raw(out_dir)
    eligible = ctx.eligible_regions(out_dir)
    stat = cfg.projection.spring_statistic

    heat = ctx.frequency(out_dir, EventKind.HEATWAVE)
    freq_regional = regional_frequency_table(heat, region_map)

    spring_freq = _spring_table(
        {rid: s for rid, s in freq_regional.items()}, stat
    )
    spring_pon = _spring_table(pon.by_region, stat)

    # Observed late-versus-base amplification for every mapped region.
    amplification = historical_amplification(
        spring_freq,
        spring_pon,
        base_period=cfg.projection.base_period,
        late_period=cfg.projection.late_period,
    )
    _write_csv(
        stage_dir / "fig4ab_amplification.csv",
        ("region", "period", "delta_days", "pon_ratio", "baseline_zero"),
        [
            (a.region, a.period, a.delta_days, a.pon_ratio, a.baseline_zero)
            for a in (amplification[r] for r in region_map.region_order if r in amplification)
        ],
    )

    # Regression eligibility over sparse-eligible regions with frequency data.
    fits = {}
    fit_rows = []
    for region in eligible:
        if region not in spring_freq:
            continue
        fit = fit_regional_model(
            region,
            spring_freq[region],
            spring_pon[region],
            alpha=cfg.projection.eligibility_alpha,
        )
        fits[region] = fit
        fit_rows.append(
            (
                region,
                fit.model.slope,
                fit.model.intercept,
                fit.r,
                fit.model.r_squared,
                fit.model.slope_pvalue,
                fit.n_years,
                fit.eligible,
            )
        )
    _write_csv(
        stage_dir / "regression_fits.csv",
        ("region", "slope", "intercept", "r", "r_squared", "p", "n_years", "eligible"),
        fit_rows,
    )
    if not any(f.eligible for f in fits.values()):
        raise ConfigError("no region passed the regression eligibility test; cannot project")

    entries = [
        e
        for e in load_model_registry(cfg.model_registry)
        if e.scenario is not Scenario.HISTORICAL and e.scenario.value in cfg.projection.scenarios
    ]
    for scenario_name in cfg.projection.scenarios:
        if not any(e.scenario.value == scenario_name for e in entries):
            raise ConfigError(f"scenario {scenario_name} has zero models in the registry")
    entries.sort(key=lambda e: (e.scenario.value, e.model))
    regions = sorted(r for r, f in fits.items() if f.eligible)

    def one(entry):
        return model_spring_frequency(
            entry,
            regions,
            region_map,
            cfg.extremes,
            spring_stat=stat,
        )

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            model_freqs = list(pool.map(one, entries))
    else:
        model_freqs = [one(e) for e in entries]

    ensemble = project_ensemble(model_freqs, fits)

    env_rows_freq = []
    env_rows_pon = []
    for scenario in sorted(ensemble.by_scenario, key=lambda s: s.value):
        proj = ensemble.by_scenario[scenario]
        targets = [None] + list(proj.regions)
        for region in targets:
            label = region if region is not None else ALL_US
            f_mean, f_lo, f_hi = proj.freq_envelope(region)
            p_mean, p_lo, p_hi = proj.pon_envelope(region)
            for yi, year in enumerate(proj.years):
                env_rows_freq.append(
                    (scenario.value, label, int(year), f_mean[yi], f_lo[yi], f_hi[yi])
                )
                env_rows_pon.append(
                    (scenario.value, label, int(year), p_mean[yi], p_lo[yi], p_hi[yi])
                )
    _write_csv(
        stage_dir / "fig4c_frequency_envelopes.csv",
        ("scenario", "region", "year", "mean", "min", "max"),
        env_rows_freq,
    )
    _write_csv(
        stage_dir / "fig4d_pon_envelopes.csv",
        ("scenario", "region", "year", "mean", "min", "max"),
        env_rows_pon,
    )

    ratios = future_amplified_ratios(
        ensemble,
        spring_freq,
        spring_pon,
        baseline_years=(cfg.window.start_year, cfg.window.end_year),
        periods={"mid_term": cfg.projection.mid_term, "long_term": cfg.projection.long_term},
    )
    _write_csv(
        stage_dir / "fig4eh_ratios.csv",
        ("scenario", "period", "region", "delta_days", "pon_ratio", "baseline_zero"),
        [
            (r.scenario, r.period, r.region, r.delta_days, r.pon_ratio, r.baseline_zero)
            for r in ratios
        ],
    )
    return {
        "eligible_fit_regions": regions,
        "models": sorted({e.model for e in entries}),
    }


_STAGE_BODIES = {
    "ingest": _stage_ingest,
    "extremes": _stage_extremes,
    "correlate": _stage_correlate,
    "composite": _stage_composite,
    "mediate": _stage_mediate,
    "project": _stage_project,
}


def _run_one_stage(ctx: PipelineContext, stage: str, out_dir: Path) -> dict:
    """Run one stage into a temp dir and rename it into place atomically."""
    tmp = out_dir / f".{stage}.partial"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        notes = _STAGE_BODIES[stage](ctx, tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    final = out_dir / stage
    if final.exists():
        shutil.rmtree(final)
    tmp.replace(final)
    return notes


def _config_echo(cfg: RunConfig) -> dict:
    def convert(obj):
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return {f.name: convert(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, Path):
            return str(obj)
        if isinstance(obj, dict):
            return {str(k): convert(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [convert(v) for v in obj]
        return obj

    echo = convert(cfg)
    echo["window"] = str(cfg.window)
    return echo


def write_manifest(cfg: RunConfig, out_dir: Path, stage_notes: dict[str, dict]) -> Path:
    inputs = {}
    candidates = [cfg.outage_table, cfg.t2m_grid, cfg.precip_grid, cfg.model_registry]
    candidates += [cfg.index_tables[k] for k in sorted(cfg.index_tables)]
    if cfg.region_map_path is not None:
        candidates.append(cfg.region_map_path)
    for p in candidates:
        if p is not None and p.exists():
            inputs[str(p)] = _sha256(p)
    artifacts = {}
    for stage in STAGES:
        stage_dir = out_dir / stage
        if not stage_dir.is_dir():
            continue
        for f in sorted(stage_dir.iterdir()):
            if f.is_file():
                artifacts[f"{stage}/{f.name}"] = _sha256(f)
    manifest = {
        "version": __version__,
        "seed": cfg.seed,
        "alpha": cfg.analysis.alpha,
        "window": str(cfg.window),
        "config": _config_echo(cfg),
        "inputs": inputs,
        "artifacts": artifacts,
        "stage_notes": stage_notes,
    }
    path = out_dir / "manifest.json"
    _write_json(path, manifest)
    return path


def run(cfg: RunConfig, stage: str = "all") -> Path:
    """Execute one stage (or all) and rewrite the manifest.

    Raises StageDependencyError when a requested stage's dependencies
    have not produced their artifacts yet.
    """
    if stage != "all" and stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)} or all")
    out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = PipelineContext(cfg)

    todo = list(STAGES) if stage == "all" else [stage]
    if stage == "all" and cfg.model_registry is None:
        todo.remove("project")
        log.warning("no model registry configured; skipping the project stage")

    stage_notes: dict[str, dict] = {}
    existing = out_dir / "manifest.json"
    if existing.exists():
        try:
            stage_notes = json.loads(existing.read_text(encoding="utf-8")).get("stage_notes", {})
        except json.JSONDecodeError:
            stage_notes = {}

    for s in todo:
        missing = [
            dep for dep in STAGE_DEPS[s] if not (out_dir / dep).is_dir() and dep not in todo
        ]
        if missing:
            raise StageDependencyError(
                f"stage {s} needs {', '.join(missing)} to have run first "
                f"(no artifacts under {out_dir})"
            )

    for s in todo:
        log.info("running stage %s", s)
        stage_notes[s] = _run_one_stage(ctx, s, out_dir)
    if stage == "all" and cfg.model_registry is None:
        stage_notes["project"] = {"skipped": "no model registry configured"}

    return write_manifest(cfg, out_dir, stage_notes)


def validate(cfg: RunConfig) -> list[Issue]:
    return validate_config(cfg)


# --- report ----------------------------------------------------------------


def _read_csv_dicts(path: Path) -> list[dict]:
    import csv

    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def build_report(out_dir: str | Path) -> dict:
    """Consolidated JSON summary assembled from the artifacts on disk."""
    out_dir = Path(out_dir)
    manifest_path = out_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{out_dir} holds no manifest.json; run the pipeline first")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    report: dict = {
        "version": manifest.get("version"),
        "window": manifest.get("window"),
        "seed": manifest.get("seed"),
    }

    ingest_summary = out_dir / "ingest" / "ingest_summary.json"
    if ingest_summary.exists():
        payload = json.loads(ingest_summary.read_text(encoding="utf-8"))
        report["ingest"] = payload

    headline = out_dir / "correlate"
    if headline.is_dir():
        cc = {}
        for season, fname in (
            ("MAM", "fig2a_region_cc.csv"),
            ("JJA", "fig3a_region_cc.csv"),
            ("DJF", "fig3e_region_cc.csv"),
        ):
            path = headline / fname
            if not path.exists():
                continue
            for row in _read_csv_dicts(path):
                if row["region"] == ALL_US and row["computable"] == "1":
                    cc[season] = {
                        "index": row["index"],
                        "r": float(row["r"]),
                        "lag": int(row["lag"]),
                        "p": float(row["p"]),
                        "significant": row["significant"] == "1",
                    }
        report["all_us_max_cc"] = cc

    composite_path = out_dir / "composite" / "fig1b_composites.csv"
    if composite_path.exists():
        seasons: dict[str, dict] = {}
        for row in _read_csv_dicts(composite_path):
            if not row["phase"]:
                seasons[row["season"]] = {"note": row["note"]}
                continue
            entry = seasons.setdefault(row["season"], {"phases": {}})
            entry["phases"][row["phase"]] = {
                "n": int(row["n"]),
                "mean": float(row["mean_pon_anomaly"]),
            }
            entry["anova_f"] = float(row["anova_f"])
            entry["anova_p"] = float(row["anova_p"])
            entry["lanina_vs_neutral_significant"] = row["lanina_vs_neutral_significant"] == "1"
        report["composites"] = seasons

    mediate_dir = out_dir / "mediate"
    if mediate_dir.is_dir():
        med = {}
        for path in sorted(mediate_dir.glob("*.csv")):
            rows = _read_csv_dicts(path)
            med[path.name] = {
                "flagged_cells": sum(1 for r in rows if r["flag"] == "1"),
                "evaluated_cells": sum(1 for r in rows if r["evaluated"] == "1"),
            }
        report["mediation"] = med

    fits_path = out_dir / "project" / "regression_fits.csv"
    if fits_path.exists():
        fits = _read_csv_dicts(fits_path)
        report["regression"] = {
            "eligible_regions": sorted(r["region"] for r in fits if r["eligible"] == "1"),
            "fits": {
                r["region"]: {
                    "slope": float(r["slope"]),
                    "intercept": float(r["intercept"]),
                    "r": float(r["r"]),
                    "p": float(r["p"]),
                }
                for r in fits
            },
        }

    ratios_path = out_dir / "project" / "fig4eh_ratios.csv"
    if ratios_path.exists():
        summary: dict[str, dict] = {}
        for row in _read_csv_dicts(ratios_path):
            key = f"{row['scenario']}/{row['period']}"
            entry = summary.setdefault(
                key, {"delta_days": [], "pon_ratio": [], "regions": []}
            )
            entry["regions"].append(row["region"])
            if row["delta_days"]:
                entry["delta_days"].append(float(row["delta_days"]))
            if row["pon_ratio"]:
                entry["pon_ratio"].append(float(row["pon_ratio"]))
        for key, entry in summary.items():
            for field in ("delta_days", "pon_ratio"):
                vals = entry.pop(field)
                entry[field + "_range"] = (
                    [min(vals), max(vals)] if vals else None
                )
        report["projection"] = summary

    return report
