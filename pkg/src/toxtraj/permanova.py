"""Two-group permutational MANOVA over flattened trajectory vectors.

The pseudo-F statistic SS_between / (SS_within / (N - 2)) is referred to a
null distribution built by reshuffling user-level group labels; the p-value
counts the identity arrangement, so p >= 1 / (n_permutations + 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .util import parallel_map, substream

DEFAULT_PERMUTATIONS = 4999


@dataclass(frozen=True)
class PermanovaResult:
    pseudo_f: float
    p_value: float
    eta_squared: float
    ss_between: float
    ss_within: float
    n_permutations: int
    df: tuple[int, int]
    degenerate: bool = False

    def to_json(self) -> dict:
        return {
            "pseudo_f": self.pseudo_f,
            "p_value": self.p_value,
            "eta_squared": self.eta_squared,
            "ss_between": self.ss_between,
            "ss_within": self.ss_within,
            "n_permutations": self.n_permutations,
            "df": list(self.df),
            "degenerate": self.degenerate,
        }


def _as_matrix(group) -> np.ndarray:
    arr = np.asarray(group, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("each group must be a non-empty 2-D array of vectors")
    return arr


def ss_decomposition(group_a, group_b) -> tuple[float, float]:
    """Between- and within-group sums of squares about the group centroids."""
    a = _as_matrix(group_a)
    b = _as_matrix(group_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("groups must have equal vector dimension")
    n_a, n_b = a.shape[0], b.shape[0]
    mean_a = a.mean(axis=0)
    mean_b = b.mean(axis=0)
    grand = (n_a * mean_a + n_b * mean_b) / (n_a + n_b)
    ss_between = n_a * float(((mean_a - grand) ** 2).sum()) + n_b * float(
        ((mean_b - grand) ** 2).sum()
    )
    ss_within = float(((a - mean_a) ** 2).sum()) + float(((b - mean_b) ** 2).sum())
    return ss_between, ss_within


def pseudo_f(ss_between: float, ss_within: float, n_total: int) -> float:
    """SS_between / (SS_within / (N - 2)); +inf when within-SS vanishes."""
    if n_total < 3:
        raise ValueError("pseudo_f requires at least 3 observations")
    if ss_within == 0.0:
        return math.inf if ss_between > 0.0 else 0.0
    return ss_between / (ss_within / (n_total - 2))


def _f_from_counts(x: np.ndarray, idx_a: np.ndarray, total_sum: np.ndarray, sst: float) -> float:
    """F for one label arrangement, via the SST = SSB + SSW identity."""
    n = x.shape[0]
    n_a = idx_a.size
    n_b = n - n_a
    sum_a = x[idx_a].sum(axis=0)
    mean_a = sum_a / n_a
    mean_b = (total_sum - sum_a) / n_b
    grand = total_sum / n
    ssb = n_a * float(((mean_a - grand) ** 2).sum()) + n_b * float(((mean_b - grand) ** 2).sum())
    ssw = sst - ssb
    if ssw <= 0.0:
        return math.inf if ssb > 0.0 else 0.0
    return ssb / (ssw / (n - 2))


def permanova_test(
    group_a,
    group_b,
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    workers: int = 1,
) -> PermanovaResult:
    """Permutation test of group separation in trajectory space.

    Labels are reshuffled preserving group sizes; each permutation draws its
    own counter-based stream from (seed, index), so results do not depend on
    worker count. p = (1 + #{F_perm >= F_obs}) / (1 + n_permutations).
    """
    if n_permutations < 1:
        raise ValueError("at least 1 permutation is required")
    a = _as_matrix(group_a)
    b = _as_matrix(group_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("groups must have equal vector dimension")
    n_a = a.shape[0]
    x = np.vstack([a, b])
    n = x.shape[0]
    if n < 3:
        raise ValueError("permanova requires at least 3 observations in total")
    ss_between, ss_within = ss_decomposition(a, b)
    f_obs = pseudo_f(ss_between, ss_within, n)
    # Permute over a canonically ordered copy with the smaller group size
    # drawn: the null distribution of F depends only on the pooled rows and
    # the unordered size split, which makes p exactly swap-invariant.
    xs = x[np.lexsort(x.T[::-1])]
    k = min(n_a, n - n_a)
    total_sum = xs.sum(axis=0)
    grand = total_sum / n
    sst = float(((xs - grand) ** 2).sum())

    def count_chunk(chunk: range) -> int:
        count = 0
        for i in chunk:
            rng = substream(seed, "permanova", i)
            idx_a = rng.permutation(n)[:k]
            if _f_from_counts(xs, idx_a, total_sum, sst) >= f_obs:
                count += 1
        return count

    if workers <= 1:
        exceed = count_chunk(range(n_permutations))
    else:
        bounds = np.linspace(0, n_permutations, workers + 1, dtype=int)
        chunks = [range(bounds[i], bounds[i + 1]) for i in range(workers)]
        exceed = sum(parallel_map(count_chunk, chunks, workers=workers))

    p_value = (1 + exceed) / (1 + n_permutations)
    denom = ss_between + ss_within
    eta_squared = ss_between / denom if denom > 0 else 0.0
    return PermanovaResult(
        pseudo_f=f_obs,
        p_value=p_value,
        eta_squared=eta_squared,
        ss_between=ss_between,
        ss_within=ss_within,
        n_permutations=n_permutations,
        df=(1, n - 2),
        degenerate=not math.isfinite(f_obs),
    )
