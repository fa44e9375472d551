"""Self-contained statistics kernel.

OLS trend test, Mann-Whitney U, Pearson r, Cohen's kappa, and t-based mean
confidence intervals, with the t and normal distribution functions built on
the regularized incomplete beta function and erfc. Everything here is a pure
function; no global state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

ALTERNATIVES = ("greater", "less", "two_sided")

_BETACF_MAX_ITER = 400
_BETACF_EPS = 1e-16
_BETACF_FPMIN = 1e-300


def norm_cdf(z: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_FPMIN:
        d = _BETACF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise RuntimeError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc_reg requires a > 0 and b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """Survival function of Student's t distribution."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * betainc_reg(df / 2.0, 0.5, x)
    return tail if t > 0 else 1.0 - tail


def t_cdf(t: float, df: float) -> float:
    return 1.0 - t_sf(t, df)


def t_ppf(q: float, df: float) -> float:
    """Inverse t CDF by bisection (monotone; ~1e-13 accuracy)."""
    if not 0.0 < q < 1.0:
        raise ValueError("quantile level must lie strictly in (0, 1)")
    if q == 0.5:
        return 0.0
    lo, hi = -1.0, 1.0
    while t_cdf(lo, df) > q:
        lo *= 2.0
        if lo < -1e12:
            break
    while t_cdf(hi, df) < q:
        hi *= 2.0
        if hi > 1e12:
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class TrendFit:
    """Simple linear regression fit with a two-sided slope test."""

    slope: float
    intercept: float
    stderr_slope: float
    t_stat: float
    p_value: float
    n: int


def ols_trend(x: Sequence[float], y: Sequence[float]) -> TrendFit:
    """Least-squares line y = intercept + slope * x with slope p-value.

    The p-value is two-sided from the t distribution with n - 2 degrees of
    freedom. Perfect fits use the convention: zero residual variance with a
    nonzero slope reports p = 0 and stderr = 0; a zero slope reports p = 1.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D sequences of equal length")
    n = x.size
    if n < 3:
        raise ValueError("ols_trend requires at least 3 observations")
    x_mean = x.mean()
    y_mean = y.mean()
    dx = x - x_mean
    dy = y - y_mean
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise ValueError("degenerate regressor: all x values are equal")
    sxy = float(dx @ dy)
    syy = float(dy @ dy)
    slope = sxy / sxx
    intercept = y_mean - slope * x_mean
    sse = max(syy - slope * sxy, 0.0)
    if syy == 0.0 or sse <= 1e-12 * syy:
        if slope == 0.0:
            return TrendFit(slope, intercept, 0.0, 0.0, 1.0, n)
        t_stat = math.inf if slope > 0 else -math.inf
        return TrendFit(slope, intercept, 0.0, t_stat, 0.0, n)
    df = n - 2
    sigma2 = sse / df
    stderr = math.sqrt(sigma2 / sxx)
    t_stat = slope / stderr
    p_value = min(1.0, 2.0 * t_sf(abs(t_stat), df))
    return TrendFit(slope, intercept, stderr, t_stat, p_value, n)


@dataclass(frozen=True)
class UTestResult:
    u_statistic: float
    p_value: float
    alternative: str
    method: str


def _midranks(values: np.ndarray) -> np.ndarray:
    """Fractional ranks (1-based); tied values share the mean rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _tie_term(values: np.ndarray) -> float:
    _, counts = np.unique(values, return_counts=True)
    return float(np.sum(counts.astype(np.float64) ** 3 - counts))


def _exact_u_pvalue(u: float, n1: int, n2: int, alternative: str) -> float:
    """Exact p by enumerating all C(n1+n2, n1) tie-free rank assignments."""
    total_ranks = range(1, n1 + n2 + 1)
    offset = n1 * (n1 + 1) / 2.0
    u_values = [sum(c) - offset for c in combinations(total_ranks, n1)]
    total = len(u_values)
    if alternative == "greater":
        count = sum(1 for v in u_values if v >= u)
    elif alternative == "less":
        count = sum(1 for v in u_values if v <= u)
    else:
        u_low = min(u, n1 * n2 - u)
        u_high = n1 * n2 - u_low
        count = sum(1 for v in u_values if v <= u_low or v >= u_high)
    return min(1.0, count / total)


def _normal_u_pvalue(u: float, n1: int, n2: int, tie_term: float, alternative: str) -> float:
    """Normal approximation with tie correction and continuity correction."""
    n = n1 + n2
    mu = n1 * n2 / 2.0
    sigma2 = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if sigma2 <= 0.0:
        return 1.0
    sigma = math.sqrt(sigma2)
    if alternative == "greater":
        return norm_sf((u - mu - 0.5) / sigma)
    if alternative == "less":
        return norm_cdf((u - mu + 0.5) / sigma)
    if u > mu:
        z = (u - mu - 0.5) / sigma
    elif u < mu:
        z = (u - mu + 0.5) / sigma
    else:
        z = 0.0
    return min(1.0, 2.0 * norm_sf(abs(z)))


def mann_whitney_u(
    a: Sequence[float],
    b: Sequence[float],
    alternative: str = "two_sided",
    method: str = "auto",
) -> UTestResult:
    """Mann-Whitney U test; U is reported for the first sample.

    method="auto" uses exact enumeration when n1 + n2 <= 16 and there are no
    ties, and the tie/continuity-corrected normal approximation otherwise.
    "exact" and "normal" force a path (exact requires tie-free data).
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    n1, n2 = a.size, b.size
    combined = np.concatenate([a, b])
    ranks = _midranks(combined)
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    tie_term = _tie_term(combined)
    has_ties = tie_term > 0.0
    if method == "auto":
        use_exact = (n1 + n2 <= 16) and not has_ties
    elif method == "exact":
        if has_ties:
            raise ValueError("exact method requires tie-free samples")
        use_exact = True
    elif method == "normal":
        use_exact = False
    else:
        raise ValueError("method must be one of: auto, exact, normal")
    if use_exact:
        p = _exact_u_pvalue(u, n1, n2, alternative)
        return UTestResult(u, p, alternative, "exact")
    p = _normal_u_pvalue(u, n1, n2, tie_term, alternative)
    return UTestResult(u, p, alternative, "normal_approx")


def pearson_r(a: Sequence[float], b: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("inputs must be 1-D sequences of equal length")
    if a.size < 2:
        raise ValueError("pearson_r requires at least 2 observations")
    da = a - a.mean()
    db = b - b.mean()
    var_a = float(da @ da)
    var_b = float(db @ db)
    if var_a == 0.0 or var_b == 0.0:
        raise ValueError("pearson_r requires nonzero variance in both inputs")
    r = float(da @ db) / math.sqrt(var_a * var_b)
    return max(-1.0, min(1.0, r))


def cohens_kappa(labels_a: Sequence, labels_b: Sequence) -> float:
    """Chance-corrected agreement between two label sequences."""
    labels_a = list(labels_a)
    labels_b = list(labels_b)
    if len(labels_a) != len(labels_b):
        raise ValueError("label sequences must have equal length")
    if not labels_a:
        raise ValueError("label sequences must be non-empty")
    n = len(labels_a)
    p_o = sum(1 for x, y in zip(labels_a, labels_b) if x == y) / n
    categories = set(labels_a) | set(labels_b)
    p_e = 0.0
    for cat in categories:
        p_e += (labels_a.count(cat) / n) * (labels_b.count(cat) / n)
    if p_e >= 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def mean_ci(samples: Sequence[float], level: float = 0.95) -> tuple[float, float]:
    """Mean and t-based confidence halfwidth: t_{n-1} * s / sqrt(n)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < 2:
        raise ValueError("mean_ci requires at least 2 samples")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie strictly in (0, 1)")
    n = samples.size
    mean = float(samples.mean())
    s = float(samples.std(ddof=1))
    if s == 0.0:
        return mean, 0.0
    t_crit = t_ppf(0.5 + level / 2.0, n - 1)
    return mean, t_crit * s / math.sqrt(n)
