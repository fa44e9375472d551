"""User grouping by toxicity trend and trajectory interpolation.

Active users (>= 50 posts by default) are split into Increasing / Decreasing
/ NoTrend groups by a per-user OLS slope test on toxicity over post time;
matched reference groups are drawn from the no-trend pool by closest mean
toxicity. Each user's post embeddings are linearly interpolated onto the
window's daily grid (carry-back before the first post, carry-forward after
the last), and weekly trajectories average non-overlapping 7-day blocks.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import Corpus, StudyWindow
from .stats import ols_trend
from .util import parallel_map

DEFAULT_MIN_POSTS = 50
SIGNIFICANCE_ALPHA = 0.05

GROUP_INCREASING = "Increasing"
GROUP_DECREASING = "Decreasing"
GROUP_NO_TREND = "NoTrend"
REF_INCREASING = "IncreasingRef"
REF_DECREASING = "DecreasingRef"

TRAJ_MAGIC = b"TRJ1"


def is_significant(p_value: float, alpha: float = SIGNIFICANCE_ALPHA) -> bool:
    """Strict threshold: p must be below alpha, not equal to it."""
    return p_value < alpha


@dataclass
class UserGroupAssignment:
    user_id: str
    group: str
    slope: float
    p_value: float
    mean_toxicity: float
    matched_to: Optional[str] = None
    degenerate: bool = False

    def to_json(self) -> dict:
        return {
            "user_id": self.user_id,
            "group": self.group,
            "slope": self.slope,
            "p_value": self.p_value,
            "mean_toxicity": self.mean_toxicity,
            "matched_to": self.matched_to,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "UserGroupAssignment":
        return cls(**doc)


@dataclass
class GroupingResult:
    """All active-user assignments plus the matched reference groups."""

    assignments: dict[str, UserGroupAssignment]
    mean_toxicity_increasing: Optional[float]
    mean_toxicity_decreasing: Optional[float]
    reference_increasing: list[str] = field(default_factory=list)
    reference_decreasing: list[str] = field(default_factory=list)

    def members(self, group: str) -> list[str]:
        if group == REF_INCREASING:
            return list(self.reference_increasing)
        if group == REF_DECREASING:
            return list(self.reference_decreasing)
        return sorted(u for u, a in self.assignments.items() if a.group == group)

    def group_sizes(self) -> dict[str, int]:
        sizes = {g: 0 for g in (GROUP_INCREASING, GROUP_DECREASING, GROUP_NO_TREND)}
        for a in self.assignments.values():
            sizes[a.group] += 1
        return sizes

    @property
    def reference_overlap(self) -> int:
        return len(set(self.reference_increasing) & set(self.reference_decreasing))

    def to_json(self) -> dict:
        return {
            "toxicity_scale": "0-100",
            "group_sizes": self.group_sizes(),
            "mean_toxicity_increasing": self.mean_toxicity_increasing,
            "mean_toxicity_decreasing": self.mean_toxicity_decreasing,
            "reference_increasing": self.reference_increasing,
            "reference_decreasing": self.reference_decreasing,
            "reference_overlap": self.reference_overlap,
            "assignments": [a.to_json() for a in sorted(self.assignments.values(), key=lambda a: a.user_id)],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GroupingResult":
        assignments = {
            a["user_id"]: UserGroupAssignment.from_json(a) for a in doc["assignments"]
        }
        return cls(
            assignments=assignments,
            mean_toxicity_increasing=doc.get("mean_toxicity_increasing"),
            mean_toxicity_decreasing=doc.get("mean_toxicity_decreasing"),
            reference_increasing=list(doc.get("reference_increasing", [])),
            reference_decreasing=list(doc.get("reference_decreasing", [])),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "GroupingResult":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def select_active_users(corpus: Corpus, min_posts: int = DEFAULT_MIN_POSTS) -> list[tuple[str, int]]:
    """Users with at least min_posts posts (boundary inclusive), by user_id."""
    counts: dict[str, int] = {}
    for post in corpus.posts:
        counts[post.user_id] = counts.get(post.user_id, 0) + 1
    return sorted((u, c) for u, c in counts.items() if c >= min_posts)


def assign_groups(
    corpus: Corpus,
    active_users: list[tuple[str, int]] | list[str],
    alpha: float = SIGNIFICANCE_ALPHA,
) -> GroupingResult:
    """Per-user toxicity-over-time regression, split by strict p < alpha.

    Users with a degenerate regression (all posts in one second) fall into
    NoTrend, flagged. Mean toxicity is reported on the 0-100 scale.
    """
    by_user = corpus.by_user()
    assignments: dict[str, UserGroupAssignment] = {}
    user_ids = [u if isinstance(u, str) else u[0] for u in active_users]
    for user_id in user_ids:
        posts = [p for p in by_user.get(user_id, []) if p.toxicity is not None]
        if len(posts) < 3:
            raise ValueError(
                f"active user {user_id!r} has {len(posts)} post(s) with toxicity; needs >= 3"
            )
        x = np.array([p.timestamp for p in posts], dtype=np.float64)
        y = np.array([p.toxicity for p in posts], dtype=np.float64)
        mean_tox = float(y.mean())
        if np.all(x == x[0]):
            assignments[user_id] = UserGroupAssignment(
                user_id, GROUP_NO_TREND, 0.0, 1.0, mean_tox, degenerate=True
            )
            continue
        fit = ols_trend(x, y)
        if is_significant(fit.p_value, alpha) and fit.slope > 0:
            group = GROUP_INCREASING
        elif is_significant(fit.p_value, alpha) and fit.slope < 0:
            group = GROUP_DECREASING
        else:
            group = GROUP_NO_TREND
        assignments[user_id] = UserGroupAssignment(
            user_id, group, fit.slope, fit.p_value, mean_tox
        )

    def group_mean(group: str) -> Optional[float]:
        means = [a.mean_toxicity for a in assignments.values() if a.group == group]
        return float(np.mean(means)) if means else None

    return GroupingResult(
        assignments=assignments,
        mean_toxicity_increasing=group_mean(GROUP_INCREASING),
        mean_toxicity_decreasing=group_mean(GROUP_DECREASING),
    )


def matched_reference(
    no_trend_users: list[tuple[str, float]],
    target_mean: float,
    n: int,
) -> list[str]:
    """The n users whose mean toxicity is closest to target_mean.

    Ties break by user_id; selection is without replacement within one call,
    but independent calls may overlap.
    """
    if len(no_trend_users) < n:
        raise ValueError(f"need {n} candidates, have {len(no_trend_users)}")
    ranked = sorted(no_trend_users, key=lambda item: (abs(item[1] - target_mean), item[0]))
    return [user_id for user_id, _ in ranked[:n]]


def build_groups(
    corpus: Corpus,
    min_posts: int = DEFAULT_MIN_POSTS,
    alpha: float = SIGNIFICANCE_ALPHA,
) -> GroupingResult:
    """Full grouping: active users, trend split, and matched references."""
    active = select_active_users(corpus, min_posts)
    result = assign_groups(corpus, active, alpha)
    pool = [
        (a.user_id, a.mean_toxicity)
        for a in result.assignments.values()
        if a.group == GROUP_NO_TREND
    ]
    n_inc = sum(1 for a in result.assignments.values() if a.group == GROUP_INCREASING)
    n_dec = sum(1 for a in result.assignments.values() if a.group == GROUP_DECREASING)
    if n_inc and result.mean_toxicity_increasing is not None and len(pool) >= n_inc:
        result.reference_increasing = matched_reference(
            pool, result.mean_toxicity_increasing, n_inc
        )
        for user_id in result.reference_increasing:
            result.assignments[user_id].matched_to = REF_INCREASING
    if n_dec and result.mean_toxicity_decreasing is not None and len(pool) >= n_dec:
        result.reference_decreasing = matched_reference(
            pool, result.mean_toxicity_decreasing, n_dec
        )
        for user_id in result.reference_decreasing:
            if result.assignments[user_id].matched_to is None:
                result.assignments[user_id].matched_to = REF_DECREASING
    return result


@dataclass
class UserTrajectory:
    user_id: str
    daily: np.ndarray  # (G, k)
    weekly: np.ndarray  # (G // 7, k)

    @property
    def flattened_daily(self) -> np.ndarray:
        return self.daily.reshape(-1)

    @property
    def flattened_weekly(self) -> np.ndarray:
        return self.weekly.reshape(-1)


def interpolate_daily(
    timestamps: np.ndarray, embeddings: np.ndarray, window: StudyWindow
) -> np.ndarray:
    """Linear interpolation of post embeddings onto the daily grid.

    Posts sharing one timestamp are averaged coordinate-wise first. Before
    the first post the earliest embedding is carried backward; after the
    last, the final embedding is carried forward.
    """
    timestamps = np.asarray(timestamps, dtype=np.int64)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if timestamps.size == 0:
        raise ValueError("user has no embedded posts in the window")
    if embeddings.ndim != 2 or embeddings.shape[0] != timestamps.size:
        raise ValueError("embeddings must be one row per timestamp")
    order = np.argsort(timestamps, kind="mergesort")
    timestamps = timestamps[order]
    embeddings = embeddings[order]
    uniq, inverse, counts = np.unique(timestamps, return_inverse=True, return_counts=True)
    if uniq.size != timestamps.size:
        merged = np.zeros((uniq.size, embeddings.shape[1]), dtype=np.float64)
        np.add.at(merged, inverse, embeddings)
        merged /= counts[:, None]
        timestamps, embeddings = uniq, merged
    tau = window.normalized_time(timestamps)
    grid = window.tau_grid()
    out = np.empty((grid.size, embeddings.shape[1]), dtype=np.float64)
    for col in range(embeddings.shape[1]):
        out[:, col] = np.interp(grid, tau, embeddings[:, col])
    return out


def weekly_average(daily: np.ndarray, week_len_days: int = 7) -> np.ndarray:
    """Average non-overlapping week blocks; trailing partial days are unused."""
    daily = np.asarray(daily, dtype=np.float64)
    if daily.ndim != 2:
        raise ValueError("daily trajectory must be a 2-D array")
    n_weeks = daily.shape[0] // week_len_days
    if n_weeks == 0:
        raise ValueError("daily trajectory shorter than one week")
    used = daily[: n_weeks * week_len_days]
    return used.reshape(n_weeks, week_len_days, daily.shape[1]).mean(axis=1)


def build_trajectories(
    corpus: Corpus, window: StudyWindow | None = None, workers: int = 1
) -> tuple[dict[str, UserTrajectory], dict]:
    """Interpolate every user with at least one embedded in-window post.

    Returns (trajectories by user, report) where the report counts users
    skipped for having no embedded posts.
    """
    if corpus.embeddings is None:
        raise ValueError("corpus has no embeddings attached")
    window = window or corpus.window
    values = corpus.embeddings.values
    items = []
    skipped = []
    for user_id, posts in sorted(corpus.by_user().items()):
        embedded = [p for p in posts if p.embedding_row is not None]
        if not embedded:
            skipped.append(user_id)
            continue
        ts = np.array([p.timestamp for p in embedded], dtype=np.int64)
        emb = values[[p.embedding_row for p in embedded]]
        items.append((user_id, ts, emb))

    def interp(item):
        user_id, ts, emb = item
        daily = interpolate_daily(ts, emb, window)
        return UserTrajectory(
            user_id=user_id, daily=daily, weekly=weekly_average(daily, window.week_len_days)
        )

    trajectories = parallel_map(interp, items, workers=workers)
    report = {"n_users": len(items), "n_skipped_no_embeddings": len(skipped)}
    return {t.user_id: t for t in trajectories}, report


def group_average_trajectory(trajectories: list[np.ndarray]) -> np.ndarray:
    """Coordinate-wise centroid across users at each timestep."""
    if not trajectories:
        raise ValueError("group must be non-empty")
    stacked = np.stack([np.asarray(t, dtype=np.float64) for t in trajectories])
    return stacked.mean(axis=0)


def write_trajectories(path, user_ids: list[str], paths_array: np.ndarray) -> None:
    """Binary trajectory file: TRJ1, u32 count, u32 T, u32 k, then per user
    a u32 length-prefixed utf-8 id and T*k float64 little-endian values."""
    paths_array = np.asarray(paths_array, dtype=np.float64)
    if paths_array.ndim != 3 or paths_array.shape[0] != len(user_ids):
        raise ValueError("paths_array must be (n_users, T, k)")
    n, t_steps, k = paths_array.shape
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(struct.pack("<III", n, t_steps, k))
        for i, user_id in enumerate(user_ids):
            encoded = user_id.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(np.ascontiguousarray(paths_array[i], dtype="<f8").tobytes())


def read_trajectories(path) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TRAJ_MAGIC:
            raise ValueError(f"bad trajectory file magic: {magic!r}")
        n, t_steps, k = struct.unpack("<III", fh.read(12))
        user_ids = []
        paths = np.empty((n, t_steps, k), dtype=np.float64)
        for i in range(n):
            (id_len,) = struct.unpack("<I", fh.read(4))
            user_ids.append(fh.read(id_len).decode("utf-8"))
            payload = fh.read(t_steps * k * 8)
            paths[i] = np.frombuffer(payload, dtype="<f8").reshape(t_steps, k)
    return user_ids, paths
