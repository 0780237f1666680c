"""Independent reference implementations used to cross-check the library.

Everything here is deliberately written the slow, obvious way (explicit
loops, textbook formulas, no shared helpers with the package) so that a
bug in the library cannot hide in a shared code path.
"""

from __future__ import annotations

import datetime as dt
import math

import numpy as np


def cc_direct(x, y, k: int) -> float:
    """Lagged cross-correlation by direct summation, full normalization."""
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    T = len(x)
    xm = sum(x) / T
    ym = sum(y) / T
    sx = math.sqrt(sum((v - xm) ** 2 for v in x))
    sy = math.sqrt(sum((v - ym) ** 2 for v in y))
    if k >= 0:
        num = sum((x[t] - xm) * (y[t + k] - ym) for t in range(T - k))
    else:
        num = sum((y[t] - ym) * (x[t - k] - xm) for t in range(T + k))
    return num / (sx * sy)


def pearson_direct(x, y) -> float:
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    n = len(x)
    xm = sum(x) / n
    ym = sum(y) / n
    num = sum((a - xm) * (b - ym) for a, b in zip(x, y))
    den = math.sqrt(sum((a - xm) ** 2 for a in x) * sum((b - ym) ** 2 for b in y))
    return num / den


def ols_normal_equations(x, y) -> tuple[float, float]:
    """(intercept, slope) by solving the normal equations directly."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    A = np.array([[n, x.sum()], [x.sum(), (x * x).sum()]])
    b = np.array([y.sum(), (x * y).sum()])
    intercept, slope = np.linalg.solve(A, b)
    return float(intercept), float(slope)


def percentile_nearest_rank(pool, p: float) -> float:
    """Nearest-rank percentile of a pool: sorted[ceil(p/100 * n) - 1]."""
    s = sorted(float(v) for v in pool)
    n = len(s)
    rank = math.ceil(p / 100.0 * n)
    rank = min(max(rank, 1), n)
    return s[rank - 1]


def doy_key_independent(d: dt.date) -> int:
    """Day-of-year key 1..365 with Feb 29 folded onto Feb 28.

    Computed from month/day tables rather than timetuple, as a separate
    route from the package's implementation.
    """
    lengths = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31]
    day = min(d.day, lengths[d.month - 1])
    return sum(lengths[: d.month - 1]) + day


def threshold_bruteforce(
    values: np.ndarray,
    t0: dt.date,
    half_width: int,
    percentile: float,
) -> np.ndarray:
    """(365, nlat, nlon) thresholds via per-key pool sort, pure loops."""
    ntime, nlat, nlon = values.shape
    keys = [doy_key_independent(t0 + dt.timedelta(days=i)) for i in range(ntime)]
    by_key: dict[int, list[int]] = {}
    for i, key in enumerate(keys):
        by_key.setdefault(key, []).append(i)
    out = np.full((365, nlat, nlon), np.nan)
    for key in range(1, 366):
        window = [((key - 1 + off) % 365) + 1 for off in range(-half_width, half_width + 1)]
        times = [t for w in window for t in by_key.get(w, [])]
        for i in range(nlat):
            for j in range(nlon):
                pool = values[times, i, j]
                if np.all(np.isfinite(pool)):
                    out[key - 1, i, j] = percentile_nearest_rank(pool, percentile)
    return out


def anova_direct(groups) -> tuple[float, float, float]:
    """(F, ms_between, ms_within) from the definitional sums."""
    groups = [[float(v) for v in g] for g in groups]
    all_values = [v for g in groups for v in g]
    grand = sum(all_values) / len(all_values)
    ss_between = 0.0
    ss_within = 0.0
    for g in groups:
        m = sum(g) / len(g)
        ss_between += len(g) * (m - grand) ** 2
        ss_within += sum((v - m) ** 2 for v in g)
    df_b = len(groups) - 1
    df_w = len(all_values) - len(groups)
    ms_b = ss_between / df_b
    ms_w = ss_within / df_w
    return ms_b / ms_w, ms_b, ms_w


def hsd_decisions_direct(groups, q: float) -> list[tuple[int, int, bool]]:
    """Pairwise HSD significance decisions given the q quantile."""
    groups = [[float(v) for v in g] for g in groups]
    _, _, ms_w = anova_direct(groups)
    means = [sum(g) / len(g) for g in groups]
    sizes = [len(g) for g in groups]
    out = []
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            crit = q * math.sqrt(ms_w / 2.0 * (1.0 / sizes[i] + 1.0 / sizes[j]))
            out.append((i, j, abs(means[i] - means[j]) > crit))
    return out


def two_sample_t_equal_var(a, b) -> float:
    """Pooled-variance two-sample t statistic."""
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    ssa = sum((v - ma) ** 2 for v in a)
    ssb = sum((v - mb) ** 2 for v in b)
    sp2 = (ssa + ssb) / (na + nb - 2)
    return (ma - mb) / math.sqrt(sp2 * (1.0 / na + 1.0 / nb))
