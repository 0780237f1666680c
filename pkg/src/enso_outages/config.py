"""Run configuration: TOML schema, defaults, and validation.

A run config names the input files and fixes every analysis knob; see
the README for the full annotated schema.  Validation returns a list of
coded issues instead of raising on first failure so the CLI can print
them all; codes starting E_ are fatal, W_ advisory.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .calendars import DEFAULT_STUDY_WINDOW, MonthWindow, parse_year_month
from .errors import ConfigError
from .extremes import ExtremeConfig
from .ingest.indices import IndexKind
from .ingest.regions import RegionMap, default_region_map, load_region_map

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class AnalysisConfig:
    alpha: float = 0.05
    max_lag_scan: tuple[int, int] = (0, 12)
    delay_curve_range: tuple[int, int] = (-12, 12)
    sparse_region_threshold: int = 20
    min_pair_samples: int = 8
    spring_index: str = "MEI"
    summer_index: str = "MEI"
    winter_index: str = "Nino3"
    emit_permutation_p: bool = False
    permutations: int = 2000
    mediation_target: str = "region"


@dataclass(frozen=True)
class ProjectionConfig:
    scenarios: tuple[str, ...] = ("ssp245", "ssp585")
    spring_statistic: str = "mean"
    eligibility_alpha: float = 0.05
    base_period: tuple[int, int] = (2000, 2010)
    late_period: tuple[int, int] = (2011, 2023)
    mid_term: tuple[int, int] = (2041, 2060)
    long_term: tuple[int, int] = (2081, 2100)


@dataclass(frozen=True)
class RunConfig:
    config_dir: Path
    outage_table: Path
    t2m_grid: Path
    precip_grid: Path
    index_tables: dict[str, Path]
    region_map_path: Path | None  # None: packaged default
    model_registry: Path | None
    window: MonthWindow = DEFAULT_STUDY_WINDOW
    climatology: tuple[int, int] | None = None
    extremes: ExtremeConfig = field(default_factory=ExtremeConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    out_dir: Path = Path("out")
    seed: int = 0
    jobs: int = 1

    def region_map(self) -> RegionMap:
        if self.region_map_path is None:
            return default_region_map()
        return load_region_map(self.region_map_path)

    def with_overrides(
        self,
        seed: int | None = None,
        out_dir: str | Path | None = None,
        alpha: float | None = None,
        jobs: int | None = None,
    ) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if out_dir is not None:
            cfg = replace(cfg, out_dir=Path(out_dir))
        if jobs is not None:
            cfg = replace(cfg, jobs=jobs)
        if alpha is not None:
            cfg = replace(cfg, analysis=replace(cfg.analysis, alpha=alpha))
        return cfg


def _pair(raw: object, what: str) -> tuple[int, int]:
    if not (isinstance(raw, list) and len(raw) == 2):
        raise ConfigError(f"{what} must be a two-element list")
    return int(raw[0]), int(raw[1])


def _window_from(doc: dict) -> MonthWindow:
    body = doc.get("window")
    if body is None:
        return DEFAULT_STUDY_WINDOW
    try:
        sy, sm = parse_year_month(str(body["start"]))
        ey, em = parse_year_month(str(body["end"]))
        return MonthWindow(sy, sm, ey, em)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad [window] section: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    base = path.parent.resolve()

    inputs = doc.get("inputs")
    if not isinstance(inputs, dict):
        raise ConfigError("config needs an [inputs] section")

    def input_path(key: str, required: bool = True) -> Path | None:
        raw = inputs.get(key)
        if raw is None:
            if required:
                raise ConfigError(f"[inputs] is missing {key!r}")
            return None
        return (base / str(raw)).resolve() if not Path(str(raw)).is_absolute() else Path(str(raw))

    raw_indices = inputs.get("index_tables")
    if not isinstance(raw_indices, dict) or not raw_indices:
        raise ConfigError("[inputs.index_tables] must name at least one index table")
    index_tables: dict[str, Path] = {}
    for name, rel in raw_indices.items():
        kind = IndexKind.parse(str(name))
        p = Path(str(rel))
        index_tables[kind.value] = (base / p).resolve() if not p.is_absolute() else p

    region_raw = inputs.get("region_map")
    region_map_path = None
    if region_raw is not None and str(region_raw) != "builtin":
        p = Path(str(region_raw))
        region_map_path = (base / p).resolve() if not p.is_absolute() else p

    window = _window_from(doc)

    climo = doc.get("climatology")
    climatology = None
    if climo is not None:
        climatology = _pair(climo.get("years") if isinstance(climo, dict) else climo, "climatology.years")

    ex = doc.get("extremes", {})
    try:
        extremes = ExtremeConfig(
            window_half_width=int(ex.get("window_half_width", 15)),
            hot_percentile=float(ex.get("hot_percentile", 95.0)),
            cold_percentile=float(ex.get("cold_percentile", 5.0)),
            precip_percentile=float(ex.get("precip_percentile", 95.0)),
            precip_wet_days_only=bool(ex.get("precip_wet_days_only", False)),
            wet_day_min=float(ex.get("wet_day_min", 0.1)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad [extremes] section: {exc}") from exc

    an = doc.get("analysis", {})
    analysis = AnalysisConfig(
        alpha=float(an.get("alpha", 0.05)),
        max_lag_scan=_pair(an.get("max_lag_scan", [0, 12]), "analysis.max_lag_scan"),
        delay_curve_range=_pair(
            an.get("delay_curve_range", [-12, 12]), "analysis.delay_curve_range"
        ),
        sparse_region_threshold=int(an.get("sparse_region_threshold", 20)),
        min_pair_samples=int(an.get("min_pair_samples", 8)),
        spring_index=str(an.get("spring_index", "MEI")),
        summer_index=str(an.get("summer_index", "MEI")),
        winter_index=str(an.get("winter_index", "Nino3")),
        emit_permutation_p=bool(an.get("emit_permutation_p", False)),
        permutations=int(an.get("permutations", 2000)),
        mediation_target=str(an.get("mediation_target", "region")),
    )

    pr = doc.get("projection", {})
    projection = ProjectionConfig(
        scenarios=tuple(str(s) for s in pr.get("scenarios", ["ssp245", "ssp585"])),
        spring_statistic=str(pr.get("spring_statistic", "mean")),
        eligibility_alpha=float(pr.get("eligibility_alpha", 0.05)),
        base_period=_pair(pr.get("base_period", [2000, 2010]), "projection.base_period"),
        late_period=_pair(pr.get("late_period", [2011, 2023]), "projection.late_period"),
        mid_term=_pair(pr.get("mid_term", [2041, 2060]), "projection.mid_term"),
        long_term=_pair(pr.get("long_term", [2081, 2100]), "projection.long_term"),
    )

    run = doc.get("run", {})
    out_raw = Path(str(run.get("out_dir", "out")))
    out_dir = (base / out_raw).resolve() if not out_raw.is_absolute() else out_raw

    return RunConfig(
        config_dir=base,
        outage_table=input_path("outage_table"),  # type: ignore[arg-type]
        t2m_grid=input_path("t2m_grid"),  # type: ignore[arg-type]
        precip_grid=input_path("precip_grid"),  # type: ignore[arg-type]
        index_tables=index_tables,
        region_map_path=region_map_path,
        model_registry=input_path("model_registry", required=False),
        window=window,
        climatology=climatology,
        extremes=extremes,
        analysis=analysis,
        projection=projection,
        out_dir=out_dir,
        seed=int(run.get("seed", 0)),
        jobs=int(run.get("jobs", 1)),
    )


@dataclass(frozen=True)
class Issue:
    code: str
    message: str

    @property
    def fatal(self) -> bool:
        return self.code.startswith("E_")

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


def validate_config(cfg: RunConfig) -> list[Issue]:
    """Static checks before a run: paths, ranges, the region map."""
    issues: list[Issue] = []

    def check_path(p: Path | None, what: str) -> None:
        if p is not None and not p.exists():
            issues.append(Issue("E_PATH", f"{what} not found: {p}"))

    check_path(cfg.outage_table, "outage table")
    check_path(cfg.t2m_grid, "temperature grid")
    check_path(cfg.precip_grid, "precipitation grid")
    for kind, p in sorted(cfg.index_tables.items()):
        check_path(p, f"index table {kind}")
    check_path(cfg.model_registry, "model registry")
    if cfg.region_map_path is not None:
        check_path(cfg.region_map_path, "region map")

    if "MEI" not in cfg.index_tables:
        issues.append(Issue("E_SCHEMA", "index_tables must include MEI (phase labels need it)"))
    for season_key in ("spring_index", "summer_index", "winter_index"):
        name = getattr(cfg.analysis, season_key)
        try:
            kind = IndexKind.parse(name)
        except ValueError:
            issues.append(Issue("E_SCHEMA", f"analysis.{season_key} names unknown index {name!r}"))
            continue
        if kind.value not in cfg.index_tables:
            issues.append(
                Issue("E_SCHEMA", f"analysis.{season_key} = {name!r} has no index table entry")
            )

    if not 0.0 < cfg.analysis.alpha < 1.0:
        issues.append(Issue("E_SCHEMA", f"analysis.alpha out of (0,1): {cfg.analysis.alpha}"))
    if cfg.analysis.max_lag_scan[0] < 0:
        issues.append(Issue("E_SCHEMA", "analysis.max_lag_scan must start at lag >= 0"))
    if cfg.analysis.max_lag_scan[0] > cfg.analysis.max_lag_scan[1]:
        issues.append(Issue("E_SCHEMA", "analysis.max_lag_scan is empty"))
    if cfg.analysis.delay_curve_range[0] > cfg.analysis.delay_curve_range[1]:
        issues.append(Issue("E_SCHEMA", "analysis.delay_curve_range is empty"))
    if cfg.analysis.mediation_target not in ("region", "all_us"):
        issues.append(
            Issue("E_SCHEMA", "analysis.mediation_target must be region or all_us")
        )
    if cfg.analysis.permutations < 1:
        issues.append(Issue("E_SCHEMA", "analysis.permutations must be positive"))
    if cfg.projection.spring_statistic not in ("mean", "sum"):
        issues.append(Issue("E_SCHEMA", "projection.spring_statistic must be mean or sum"))
    for s in cfg.projection.scenarios:
        if s not in ("ssp245", "ssp585"):
            issues.append(Issue("E_SCHEMA", f"unknown projection scenario {s!r}"))
    if cfg.jobs < 1:
        issues.append(Issue("E_SCHEMA", f"run.jobs must be >= 1, got {cfg.jobs}"))

    if cfg.climatology is not None:
        lo, hi = cfg.climatology
        if lo > hi:
            issues.append(Issue("E_WINDOW", f"climatology years reversed: {lo}..{hi}"))
        if lo < cfg.window.start_year or hi > cfg.window.end_year:
            issues.append(
                Issue("E_WINDOW", f"climatology {lo}..{hi} extends outside {cfg.window}")
            )

    if cfg.window.n_months < 36:
        issues.append(
            Issue("W_WINDOW", f"window {cfg.window} is short ({cfg.window.n_months} months)")
        )

    try:
        region_map = cfg.region_map()
    except Exception as exc:
        issues.append(Issue("E_REGION", str(exc)))
    else:
        overlaps = region_map.bbox_overlaps()
        if overlaps:
            pairs = ", ".join(f"{a}/{b}" for a, b in overlaps)
            issues.append(
                Issue(
                    "W_OVERLAP",
                    f"region boxes overlap ({pairs}); cells resolve to the first region in map order",
                )
            )
    if cfg.model_registry is None:
        issues.append(
            Issue("W_NOMODELS", "no model registry configured; the project stage will be skipped")
        )
    return issues
