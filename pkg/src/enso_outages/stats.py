"""Statistical kernels: lagged cross-correlation, ANOVA, Tukey HSD, OLS.

The time-delayed cross-correlation follows the convention that a positive
lag k means x leads y by k months:

    R(k) = sum_{t=1}^{T-k} (x(t) - xbar) (y(t+k) - ybar) / (Sx * Sy)

where Sx, Sy are the full-series centered root sums of squares, not the
overlap-only ones.  The full-series normalization keeps |R| <= 1 for every
lag and damps estimates at long lags where little overlap remains.  A
negative k swaps the roles of x and y, so R_xy(k) = R_yx(-k) exactly.

Significance of a correlation r over n samples uses the two-sided t test
with n - 2 degrees of freedom, evaluated through the regularized
incomplete beta function; a circular-rotation permutation test is offered
as a serial-correlation-robust alternative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special
from scipy import stats as _sps

from .errors import DegenerateSeriesError

DEFAULT_ALPHA = 0.05

CC_MODES = ("max_abs", "most_negative", "most_positive")


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    lag: int
    n_samples: int
    p_value: float
    degenerate: bool = False

    def significant(self, alpha: float = DEFAULT_ALPHA) -> bool:
        return self.p_value < alpha


def _as_clean_vector(x: Sequence[float] | np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _centered_ss(x: np.ndarray) -> float:
    d = x - x.mean()
    return float(d @ d)


def lagged_cc(
    x: Sequence[float] | np.ndarray,
    y: Sequence[float] | np.ndarray,
    k: int,
    norm: str = "full",
) -> float:
    """Cross-correlation of x and y at integer lag k (positive: x leads).

    norm="full" divides by the full-series root sums of squares;
    norm="overlap" is the plain Pearson correlation of the two
    overlapping segments.
    """
    xa = _as_clean_vector(x, "x")
    ya = _as_clean_vector(y, "y")
    if xa.shape[0] != ya.shape[0]:
        raise ValueError("series lengths differ")
    T = xa.shape[0]
    if abs(k) > T - 3:
        raise ValueError(f"lag {k} leaves fewer than 3 overlapping samples (T={T})")
    if k < 0:
        return lagged_cc(ya, xa, -k, norm=norm)
    if norm == "full":
        sx = _centered_ss(xa)
        sy = _centered_ss(ya)
        if sx == 0.0 or sy == 0.0:
            raise DegenerateSeriesError("cross-correlation of a constant series")
        num = float((xa[: T - k] - xa.mean()) @ (ya[k:] - ya.mean()))
        return num / np.sqrt(sx * sy)
    if norm == "overlap":
        return pearson(xa[: T - k], ya[k:])
    raise ValueError(f"unknown norm {norm!r}")


def pearson(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    """Plain Pearson correlation of two equal-length samples."""
    xa = _as_clean_vector(x, "x")
    ya = _as_clean_vector(y, "y")
    if xa.shape[0] != ya.shape[0]:
        raise ValueError("sample lengths differ")
    if xa.shape[0] < 2:
        raise ValueError("pearson needs at least 2 samples")
    xd = xa - xa.mean()
    yd = ya - ya.mean()
    sx = float(xd @ xd)
    sy = float(yd @ yd)
    if sx == 0.0 or sy == 0.0:
        raise DegenerateSeriesError("pearson correlation of a constant sample")
    return float(xd @ yd) / np.sqrt(sx * sy)


def pearson_columns(x: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Pearson r of a fixed vector x against every column of Y.

    Degenerate columns (zero variance or any non-finite entry) come back
    NaN rather than raising, so grid scans can skip them.
    """
    x = np.asarray(x, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or x.shape[0] != Y.shape[0]:
        raise ValueError("shape mismatch between x and Y columns")
    xd = x - x.mean()
    sx = float(xd @ xd)
    col_ok = np.all(np.isfinite(Y), axis=0)
    safe = np.where(col_ok[None, :], Y, 0.0)
    yd = safe - safe.mean(axis=0)
    sy = np.einsum("ij,ij->j", yd, yd)
    denom = np.sqrt(sx * sy)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (xd @ yd) / denom
    r[~col_ok | (sy == 0.0)] = np.nan
    if sx == 0.0:
        r[:] = np.nan
    return r


def cc_significance(r: float, n: int) -> float:
    """Two-sided p-value for a correlation r over n paired samples.

    Uses t = r * sqrt((n-2) / (1-r^2)) with n-2 degrees of freedom; the
    tail probability is the regularized incomplete beta
    I(df/2, 1/2; df/(df+t^2)).  |r| = 1 returns exactly 0.
    """
    if n < 4:
        raise ValueError(f"significance needs n >= 4, got {n}")
    if not np.isfinite(r) or abs(r) > 1.0 + 1e-12:
        raise ValueError(f"correlation out of range: {r!r}")
    if abs(r) >= 1.0:
        return 0.0
    df = n - 2
    t2 = r * r * df / (1.0 - r * r)
    return float(special.betainc(df / 2.0, 0.5, df / (df + t2)))


def t_sf_two_sided(t: float, df: int) -> float:
    """P(|T| >= t) for Student's t with df degrees of freedom."""
    if df < 1:
        raise ValueError("degrees of freedom must be positive")
    t2 = float(t) * float(t)
    return float(special.betainc(df / 2.0, 0.5, df / (df + t2)))


def f_sf(f: float, df_num: int, df_den: int) -> float:
    """P(F >= f) for the F distribution, via the regularized incomplete beta."""
    if df_num < 1 or df_den < 1:
        raise ValueError("degrees of freedom must be positive")
    if f <= 0.0:
        return 1.0
    x = df_den / (df_den + df_num * float(f))
    return float(special.betainc(df_den / 2.0, df_num / 2.0, x))


def permutation_pvalue(
    x: Sequence[float] | np.ndarray,
    y: Sequence[float] | np.ndarray,
    k: int = 0,
    n_permutations: int = 2000,
    rng: np.random.Generator | None = None,
    norm: str = "full",
) -> float:
    """Circular-rotation permutation p-value for the lag-k cross-correlation.

    y is rotated by a uniform random offset in 1..T-1, preserving its
    autocorrelation structure; the add-one rule keeps the estimate
    strictly positive: p = (1 + #{|r_perm| >= |r_obs|}) / (n_perm + 1).
    """
    if n_permutations < 1:
        raise ValueError("need at least one permutation")
    rng = rng if rng is not None else np.random.default_rng()
    xa = _as_clean_vector(x, "x")
    ya = _as_clean_vector(y, "y")
    T = ya.shape[0]
    if T < 4:
        raise ValueError("permutation test needs at least 4 samples")
    r_obs = abs(lagged_cc(xa, ya, k, norm=norm))
    offsets = rng.integers(1, T, size=n_permutations)
    exceed = 0
    for off in offsets:
        r_perm = lagged_cc(xa, np.roll(ya, int(off)), k, norm=norm)
        if abs(r_perm) >= r_obs:
            exceed += 1
    return (1 + exceed) / (n_permutations + 1)


def iter_lags_tiebreak_order(lag_range: tuple[int, int]) -> list[int]:
    """Lags ordered so earlier wins ties: smaller |k| first, then positive k."""
    lo, hi = lag_range
    if lo > hi:
        raise ValueError("empty lag range")
    return sorted(range(lo, hi + 1), key=lambda k: (abs(k), k < 0))


def max_cc(
    x: Sequence[float] | np.ndarray,
    y: Sequence[float] | np.ndarray,
    lag_range: tuple[int, int] = (-12, 12),
    mode: str = "max_abs",
    norm: str = "full",
) -> CorrelationResult:
    """Extremal cross-correlation over an inclusive integer lag range.

    mode picks the objective: "max_abs" (largest |r|), "most_negative"
    (smallest r), or "most_positive" (largest r).  Ties prefer the smaller
    |k|, then the positive lag.  n_samples is the overlap count T - |k|
    at the winning lag, and p_value the t-test significance over it.
    """
    if mode not in CC_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    xa = _as_clean_vector(x, "x")
    ya = _as_clean_vector(y, "y")
    T = xa.shape[0]
    best_r = np.nan
    best_k = 0
    found = False
    for k in iter_lags_tiebreak_order(lag_range):
        if abs(k) > T - 3:
            continue
        r = lagged_cc(xa, ya, k, norm=norm)
        if not found:
            best_r, best_k, found = r, k, True
            continue
        if mode == "max_abs":
            better = abs(r) > abs(best_r)
        elif mode == "most_negative":
            better = r < best_r
        else:
            better = r > best_r
        if better:
            best_r, best_k = r, k
    if not found:
        raise ValueError("lag range leaves no lag with enough overlap")
    n = T - abs(best_k)
    degenerate = abs(best_r) >= 1.0
    return CorrelationResult(
        r=float(best_r),
        lag=int(best_k),
        n_samples=int(n),
        p_value=cc_significance(float(best_r), int(n)),
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class AnovaResult:
    """One-way fixed-effects ANOVA over g groups.

    group_effects are the group means minus the pooled grand mean, so the
    size-weighted effects sum to zero.
    """

    group_means: tuple[float, ...]
    group_sizes: tuple[int, ...]
    group_effects: tuple[float, ...]
    grand_mean: float
    f_stat: float
    p_value: float
    df_between: int
    df_within: int
    ms_within: float
    ms_between: float


def anova(groups: Sequence[Sequence[float] | np.ndarray]) -> AnovaResult:
    """One-way ANOVA; groups is a sequence of >= 2 samples of >= 2 values."""
    if len(groups) < 2:
        raise ValueError("anova needs at least 2 groups")
    arrays = [_as_clean_vector(g, f"group {i}") for i, g in enumerate(groups)]
    sizes = [a.shape[0] for a in arrays]
    if min(sizes) < 2:
        raise ValueError("every group needs at least 2 samples")
    n_total = sum(sizes)
    g = len(arrays)
    pooled = np.concatenate(arrays)
    grand = float(pooled.mean())
    means = [float(a.mean()) for a in arrays]
    ss_between = sum(n * (m - grand) ** 2 for n, m in zip(sizes, means))
    ss_within = sum(_centered_ss(a) for a in arrays)
    df_between = g - 1
    df_within = n_total - g
    ms_between = ss_between / df_between
    ms_within = ss_within / df_within
    if ms_within == 0.0:
        raise DegenerateSeriesError("zero within-group variance everywhere")
    f_stat = ms_between / ms_within
    return AnovaResult(
        group_means=tuple(means),
        group_sizes=tuple(sizes),
        group_effects=tuple(m - grand for m in means),
        grand_mean=grand,
        f_stat=float(f_stat),
        p_value=f_sf(float(f_stat), df_between, df_within),
        df_between=df_between,
        df_within=df_within,
        ms_within=float(ms_within),
        ms_between=float(ms_between),
    )


@dataclass(frozen=True)
class HsdPair:
    i: int
    j: int
    mean_diff: float
    critical: float
    significant: bool


@dataclass(frozen=True)
class HsdResult:
    alpha: float
    q_critical: float
    df_within: int
    ms_within: float
    pairs: tuple[HsdPair, ...]

    def pair(self, i: int, j: int) -> HsdPair:
        a, b = min(i, j), max(i, j)
        for p in self.pairs:
            if (p.i, p.j) == (a, b):
                return p
        raise KeyError((i, j))


def studentized_range_quantile(alpha: float, n_groups: int, df: int) -> float:
    """Upper-alpha quantile q(alpha; k, df) of the studentized range."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if n_groups < 2 or df < 1:
        raise ValueError("need at least 2 groups and 1 degree of freedom")
    return float(_sps.studentized_range.ppf(1.0 - alpha, n_groups, df))


def tukey_hsd(
    groups: Sequence[Sequence[float] | np.ndarray], alpha: float = DEFAULT_ALPHA
) -> HsdResult:
    """All pairwise honestly-significant-difference comparisons.

    Unequal group sizes use the Tukey-Kramer critical value
    q * sqrt(MS_within / 2 * (1/n_i + 1/n_j)); a pair differs when
    |mean_i - mean_j| exceeds it.
    """
    res = anova(groups)
    g = len(res.group_sizes)
    q = studentized_range_quantile(alpha, g, res.df_within)
    pairs = []
    for i in range(g):
        for j in range(i + 1, g):
            diff = res.group_means[i] - res.group_means[j]
            crit = q * np.sqrt(
                res.ms_within / 2.0 * (1.0 / res.group_sizes[i] + 1.0 / res.group_sizes[j])
            )
            pairs.append(
                HsdPair(
                    i=i,
                    j=j,
                    mean_diff=float(diff),
                    critical=float(crit),
                    significant=bool(abs(diff) > crit),
                )
            )
    return HsdResult(
        alpha=alpha,
        q_critical=float(q),
        df_within=res.df_within,
        ms_within=res.ms_within,
        pairs=tuple(pairs),
    )


@dataclass(frozen=True)
class LinearModel:
    """OLS straight line y = intercept + slope * x."""

    intercept: float
    slope: float
    residual_se: float
    r_squared: float
    slope_pvalue: float
    n: int

    def predict(self, x: np.ndarray | float) -> np.ndarray | float:
        return self.intercept + self.slope * np.asarray(x, dtype=np.float64)


def ols_fit(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> LinearModel:
    """Least-squares line with the slope's two-sided t-test p-value."""
    xa = _as_clean_vector(x, "x")
    ya = _as_clean_vector(y, "y")
    if xa.shape[0] != ya.shape[0]:
        raise ValueError("sample lengths differ")
    n = xa.shape[0]
    if n < 3:
        raise ValueError(f"ols_fit needs at least 3 samples, got {n}")
    sxx = _centered_ss(xa)
    if sxx == 0.0:
        raise DegenerateSeriesError("regressor has zero variance")
    xd = xa - xa.mean()
    slope = float(xd @ (ya - ya.mean())) / sxx
    intercept = float(ya.mean()) - slope * float(xa.mean())
    resid = ya - (intercept + slope * xa)
    sse = float(resid @ resid)
    syy = _centered_ss(ya)
    df = n - 2
    resid_var = sse / df
    se_slope = np.sqrt(resid_var / sxx)
    if se_slope == 0.0:
        p = 0.0
    else:
        p = t_sf_two_sided(slope / se_slope, df)
    r2 = 1.0 if syy == 0.0 else 1.0 - sse / syy
    return LinearModel(
        intercept=intercept,
        slope=slope,
        residual_se=float(np.sqrt(resid_var)),
        r_squared=float(r2),
        slope_pvalue=float(p),
        n=n,
    )
