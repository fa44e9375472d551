"""Command-line pipeline: ingest -> reduce -> cluster -> merge -> groups ->
trajectories -> permanova -> assign, plus synthetic-scenario generation and
report rendering. A single root seed (config or TOXTRAJ_SEED) feeds every
stage through named substreams, so any stage can be replayed in isolation.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, corpus as corpus_mod, reduce as reduce_mod
from .coherence import (
    DEFAULT_ALPHA,
    DEFAULT_N_IN,
    DEFAULT_N_OUT,
    DEFAULT_REPS,
    ConstantCoherenceScorer,
    ExternalCoherenceScorer,
    ReferenceCoherenceScorer,
    TopicTree,
    level_counts,
    merge_pass,
)
from .corpus import StudyWindow, load_corpus, load_corpus_bundle, save_corpus, study_window
from .hdbscan import ClusterTree, HdbscanParams, recursive_cluster
from .knn import DEFAULT_K, fit_knn, label_trajectory
from .permanova import DEFAULT_PERMUTATIONS, permanova_test
from .synth import ScenarioConfig, generate_user_streams
from .trajectory import (
    DEFAULT_MIN_POSTS,
    GROUP_DECREASING,
    GROUP_INCREASING,
    REF_DECREASING,
    REF_INCREASING,
    GroupingResult,
    build_groups,
    build_trajectories,
    group_average_trajectory,
    read_trajectories,
    weekly_average,
    write_trajectories,
)
from .util import seed_for, sha256_file

SEED_ENV_VAR = "TOXTRAJ_SEED"

# Default configuration constants, in one place for snapshot checks.
PIPELINE_DEFAULTS = {
    "min_posts": DEFAULT_MIN_POSTS,
    "n_daily_grid": corpus_mod.DEFAULT_DAILY_GRID,
    "week_len_days": corpus_mod.DEFAULT_WEEK_LEN_DAYS,
    "n_weekly_grid": corpus_mod.DEFAULT_DAILY_GRID // corpus_mod.DEFAULT_WEEK_LEN_DAYS,
    "coherence_reps": DEFAULT_REPS,
    "coherence_n_in": DEFAULT_N_IN,
    "coherence_n_out": DEFAULT_N_OUT,
    "alpha": DEFAULT_ALPHA,
    "n_permutations": DEFAULT_PERMUTATIONS,
    "knn_k": DEFAULT_K,
    "reduce_fraction": reduce_mod.DEFAULT_SAMPLE_FRACTION,
    "reduce_dim": reduce_mod.DEFAULT_OUTPUT_DIM,
    "max_depth": 6,
    "t0": corpus_mod.DEFAULT_T0,
    "t_end": corpus_mod.DEFAULT_T_END,
}

STAGE_ORDER = [
    "ingest",
    "reduce",
    "cluster",
    "merge",
    "groups",
    "trajectories",
    "permanova",
    "assign",
]


def _root_seed(config_seed: int) -> int:
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else int(config_seed)


def stage_seed(root_seed: int, stage: str) -> int:
    """Per-stage seed derived from the root seed and the stage name."""
    return int(seed_for(root_seed, "stage", stage).generate_state(1, np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# Stage implementations (shared by subcommands and the pipeline runner)


def run_ingest(posts, embeddings, out, t0=None, t_end=None) -> dict:
    window = study_window(t0=t0, t_end=t_end)
    corpus = load_corpus(posts, embeddings_path=embeddings, window=window)
    paths = save_corpus(corpus, out)
    return {
        "outputs": paths,
        "n_posts": len(corpus),
        "n_dropped_outside_window": corpus.n_dropped_outside_window,
    }


def run_reduce(src, out, dim, fraction, seed, external=False) -> dict:
    matrix = corpus_mod.read_embeddings(src)
    if external:
        if matrix.d != dim:
            raise ValueError(f"external embeddings have d={matrix.d}, expected {dim}")
        reduced = matrix
        model = reduce_mod.external_model(dim)
    else:
        model = reduce_mod.fit_on_sample(matrix, fraction=fraction, output_dim=dim, seed=seed)
        reduced = reduce_mod.transform(model, matrix)
    corpus_mod.write_embeddings(out, reduced.values, reduced.row_ids)
    return {"outputs": {"embeddings": str(out)}, "kind": model.kind, "dim": dim}


def run_cluster(src, out, min_cluster_size, min_samples, max_depth) -> dict:
    matrix = corpus_mod.read_embeddings(src)
    params = HdbscanParams(min_cluster_size=min_cluster_size, min_samples=min_samples)
    tree = recursive_cluster(matrix.values, params, max_depth=max_depth)
    tree.save(out)
    per_level: dict[int, int] = {}
    for node in tree.nodes.values():
        per_level[node.level] = per_level.get(node.level, 0) + 1
    return {
        "outputs": {"tree": str(out)},
        "nodes_per_level": dict(sorted(per_level.items())),
        "n_outliers": int(tree.outlier_rows().size),
    }


def _make_scorer(kind: str, out_dir: Path):
    if kind == "reference":
        return ReferenceCoherenceScorer()
    if kind == "external":
        return ExternalCoherenceScorer(
            out_dir / "coherence_requests.ndjson", out_dir / "coherence_responses.ndjson"
        )
    if kind.startswith("constant:"):
        return ConstantCoherenceScorer(int(kind.split(":", 1)[1]))
    raise ValueError(f"unknown scorer kind: {kind!r}")


def run_merge(tree_path, corpus_dir, embeddings, out, scorer, alpha, seed, reps, n_in, n_out, workers) -> dict:
    tree = ClusterTree.load(tree_path)
    if embeddings is None:
        embeddings = Path(corpus_dir) / "embeddings.emb"
    corpus = load_corpus(
        Path(corpus_dir) / "posts.ndjson",
        embeddings_path=embeddings,
        window=StudyWindow.from_json(json.loads((Path(corpus_dir) / "window.json").read_text())),
    )
    scorer_obj = _make_scorer(scorer, Path(out).parent)
    topics = merge_pass(
        tree, corpus, scorer_obj, alpha=alpha, seed=seed,
        reps=reps, n_in=n_in, n_out=n_out, workers=workers,
    )
    topics.save(out)
    return {
        "outputs": {"topics": str(out)},
        "level_counts": level_counts(topics),
        "n_outliers": topics.n_outliers,
    }


def run_groups(corpus_dir, out, min_posts, alpha) -> dict:
    corpus = load_corpus_bundle(corpus_dir)
    grouping = build_groups(corpus, min_posts=min_posts, alpha=alpha)
    grouping.save(out)
    return {
        "outputs": {"groups": str(out)},
        "group_sizes": grouping.group_sizes(),
        "reference_overlap": grouping.reference_overlap,
    }


def run_trajectories(corpus_dir, embeddings, out, workers) -> dict:
    window = StudyWindow.from_json(
        json.loads((Path(corpus_dir) / "window.json").read_text())
    )
    corpus = load_corpus(
        Path(corpus_dir) / "posts.ndjson", embeddings_path=embeddings, window=window
    )
    trajectories, report = build_trajectories(corpus, window, workers=workers)
    user_ids = sorted(trajectories)
    paths = np.stack([trajectories[u].daily for u in user_ids]) if user_ids else np.empty((0, window.n_daily_grid, 5))
    write_trajectories(out, user_ids, paths)
    return {"outputs": {"trajectories": str(out)}, **report}


PAIR_GROUPS = {
    "increasing": (GROUP_INCREASING, REF_INCREASING),
    "decreasing": (GROUP_DECREASING, REF_DECREASING),
}


def _pair_vectors(user_ids, paths, grouping: GroupingResult, pair: str, freq: str, week_len: int):
    trend_group, ref_group = PAIR_GROUPS[pair]
    index = {u: i for i, u in enumerate(user_ids)}

    def flatten(users):
        rows = []
        for u in users:
            if u not in index:
                continue
            daily = paths[index[u]]
            grid = daily if freq == "daily" else weekly_average(daily, week_len)
            rows.append(grid.reshape(-1))
        return np.asarray(rows)

    a = flatten(grouping.members(trend_group))
    b = flatten(grouping.members(ref_group))
    return a, b


def run_permanova(traj_path, groups_path, out, pairs, freqs, n_permutations, seed, workers, week_len=7) -> dict:
    # traj_path must hold the daily grid; weekly vectors are derived from it.
    user_ids, paths = read_trajectories(traj_path)
    grouping = GroupingResult.load(groups_path)
    rows = []
    for pair in pairs:
        for freq in freqs:
            a, b = _pair_vectors(user_ids, paths, grouping, pair, freq, week_len)
            if a.shape[0] == 0 or b.shape[0] == 0:
                rows.append({"pair": pair, "freq": freq, "skipped": "empty group"})
                continue
            result = permanova_test(
                a, b, n_permutations=n_permutations, seed=stage_seed(seed, f"permanova-{pair}-{freq}"), workers=workers
            )
            rows.append({"pair": pair, "freq": freq, **result.to_json()})
    doc = {"rows": rows}
    if out is None:
        print(json.dumps(doc, indent=2))
        return {"outputs": {}, "n_rows": len(rows)}
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    return {"outputs": {"permanova": str(out)}, "n_rows": len(rows)}


def run_assign(topics_path, embeddings, traj_path, groups_path, out, k, week_len=7) -> dict:
    topics = TopicTree.load(topics_path)
    matrix = corpus_mod.read_embeddings(embeddings)
    assignment = topics.topic_of_rows()
    leaf_ids = {n.node_id for n in topics.surviving_leaves()}
    labeled_rows = np.flatnonzero(np.isin(assignment, sorted(leaf_ids)))
    if labeled_rows.size == 0:
        raise ValueError("no rows are assigned to surviving topics")
    model = fit_knn(matrix.values[labeled_rows], assignment[labeled_rows], k=k)
    user_ids, paths = read_trajectories(traj_path)
    grouping = GroupingResult.load(groups_path)
    index = {u: i for i, u in enumerate(user_ids)}
    topic_toxicity = {
        n.node_id: n.mean_toxicity for n in topics.surviving()
    }
    groups_doc = {}
    for name in (GROUP_INCREASING, GROUP_DECREASING, REF_INCREASING, REF_DECREASING):
        members = [u for u in grouping.members(name) if u in index]
        if not members:
            continue
        avg_daily = group_average_trajectory([paths[index[u]] for u in members])
        avg_weekly = weekly_average(avg_daily, week_len)
        daily_lab = label_trajectory(model, avg_daily)
        weekly_lab = label_trajectory(model, avg_weekly)
        groups_doc[name] = {
            "n_users": len(members),
            "daily": daily_lab.to_json(),
            "weekly": weekly_lab.to_json(),
            "weekly_table": [
                {
                    "topic": topic,
                    "week_start": start,
                    "week_end": end,
                    "mean_toxicity": topic_toxicity.get(topic),
                }
                for topic, start, end in weekly_lab.runs
            ],
        }
    doc = {"k": k, "topics": sorted(leaf_ids), "groups": groups_doc}
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    return {"outputs": {"labeled": str(out)}, "n_training_rows": int(labeled_rows.size)}


def run_synth(scenario_path, out_dir, seed=None) -> dict:
    config = ScenarioConfig.load(scenario_path)
    if seed is not None:
        config.seed = seed
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus, truth = generate_user_streams(config)
    corpus_mod.write_posts(out / "posts.ndjson", corpus.posts)
    corpus_mod.write_embeddings(
        out / "embeddings.emb", corpus.embeddings.values, corpus.embeddings.row_ids
    )
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True))
    (out / "window.json").write_text(json.dumps(corpus.window.to_json(), indent=2))
    return {
        "outputs": {
            "posts": str(out / "posts.ndjson"),
            "embeddings": str(out / "embeddings.emb"),
            "truth": str(out / "truth.json"),
        },
        "n_posts": len(corpus),
        "n_users": config.n_users,
    }


# ---------------------------------------------------------------------------
# Pipeline runner


def _hash_outputs(outputs: dict) -> dict:
    hashes = {}
    for name, path in outputs.items():
        p = Path(path)
        if p.is_file():
            hashes[name] = sha256_file(p)
    return hashes


def run_pipeline(config: dict, config_dir: Path | None = None) -> dict:
    """Execute enabled stages in order; returns the run manifest."""
    out_dir = Path(config.get("out_dir", "toxtraj_run"))
    out_dir.mkdir(parents=True, exist_ok=True)
    root_seed = _root_seed(config.get("seed", 0))
    stages_cfg = config.get("stages", {})
    workers = int(config.get("workers", 1))
    manifest = {
        "version": __version__,
        "root_seed": root_seed,
        "out_dir": str(out_dir),
        "stages": [],
    }

    def resolve(path):
        p = Path(path)
        if not p.is_absolute() and config_dir is not None:
            candidate = config_dir / p
            if candidate.exists():
                return candidate
        return p

    def record(name, started, result):
        manifest["stages"].append(
            {
                "name": name,
                "seed": stage_seed(root_seed, name),
                "wall_time_s": round(time.time() - started, 3),
                "outputs": result.get("outputs", {}),
                "output_hashes": _hash_outputs(result.get("outputs", {})),
                "summary": {k: v for k, v in result.items() if k != "outputs"},
            }
        )

    def enabled(name):
        stage = stages_cfg.get(name, {})
        return stage.get("enabled", True), stage

    corpus_dir = out_dir / "corpus"
    reduced_path = out_dir / "reduced.emb"
    tree_path = out_dir / "tree.json"
    topics_path = out_dir / "topics.json"
    groups_path = out_dir / "groups.json"
    traj_path = out_dir / "traj.bin"
    permanova_path = out_dir / "permanova.json"
    labeled_path = out_dir / "labeled.json"

    name = "synth"
    try:
        on, stage = enabled("synth")
        if on and "synth" in stages_cfg:
            started = time.time()
            result = run_synth(
                resolve(stage["scenario"]), out_dir / "synth", seed=stage.get("seed")
            )
            record("synth", started, result)
            stages_cfg.setdefault("ingest", {})
            stages_cfg["ingest"].setdefault("posts", str(out_dir / "synth" / "posts.ndjson"))
            stages_cfg["ingest"].setdefault("embeddings", str(out_dir / "synth" / "embeddings.emb"))
            window_doc = json.loads((out_dir / "synth" / "window.json").read_text())
            stages_cfg["ingest"].setdefault("t0", window_doc["t0"])
            stages_cfg["ingest"].setdefault("t_end", window_doc["t_end"])

        for name in STAGE_ORDER:
            on, stage = enabled(name)
            if not on:
                continue
            started = time.time()
            if name == "ingest":
                result = run_ingest(
                    resolve(stage["posts"]),
                    resolve(stage["embeddings"]) if stage.get("embeddings") else None,
                    corpus_dir,
                    t0=stage.get("t0"),
                    t_end=stage.get("t_end"),
                )
            elif name == "reduce":
                result = run_reduce(
                    corpus_dir / "embeddings.emb",
                    reduced_path,
                    dim=stage.get("dim", PIPELINE_DEFAULTS["reduce_dim"]),
                    fraction=stage.get("fraction", PIPELINE_DEFAULTS["reduce_fraction"]),
                    seed=stage_seed(root_seed, "reduce"),
                    external=stage.get("external", False),
                )
            elif name == "cluster":
                result = run_cluster(
                    reduced_path if reduced_path.exists() else corpus_dir / "embeddings.emb",
                    tree_path,
                    min_cluster_size=stage.get("min_cluster_size", 100),
                    min_samples=stage.get("min_samples", stage.get("min_cluster_size", 100)),
                    max_depth=stage.get("max_depth", PIPELINE_DEFAULTS["max_depth"]),
                )
            elif name == "merge":
                result = run_merge(
                    tree_path,
                    corpus_dir,
                    reduced_path if reduced_path.exists() else corpus_dir / "embeddings.emb",
                    topics_path,
                    scorer=stage.get("scorer", "reference"),
                    alpha=stage.get("alpha", PIPELINE_DEFAULTS["alpha"]),
                    seed=stage_seed(root_seed, "merge"),
                    reps=stage.get("reps", PIPELINE_DEFAULTS["coherence_reps"]),
                    n_in=stage.get("n_in", PIPELINE_DEFAULTS["coherence_n_in"]),
                    n_out=stage.get("n_out", PIPELINE_DEFAULTS["coherence_n_out"]),
                    workers=workers,
                )
            elif name == "groups":
                result = run_groups(
                    corpus_dir,
                    groups_path,
                    min_posts=stage.get("min_posts", PIPELINE_DEFAULTS["min_posts"]),
                    alpha=stage.get("alpha", PIPELINE_DEFAULTS["alpha"]),
                )
            elif name == "trajectories":
                result = run_trajectories(
                    corpus_dir,
                    reduced_path if reduced_path.exists() else corpus_dir / "embeddings.emb",
                    traj_path,
                    workers=workers,
                )
            elif name == "permanova":
                result = run_permanova(
                    traj_path,
                    groups_path,
                    permanova_path,
                    pairs=stage.get("pairs", ["increasing", "decreasing"]),
                    freqs=stage.get("freqs", ["daily", "weekly"]),
                    n_permutations=stage.get("n_permutations", PIPELINE_DEFAULTS["n_permutations"]),
                    seed=stage_seed(root_seed, "permanova"),
                    workers=workers,
                )
            elif name == "assign":
                result = run_assign(
                    topics_path,
                    reduced_path if reduced_path.exists() else corpus_dir / "embeddings.emb",
                    traj_path,
                    groups_path,
                    labeled_path,
                    k=stage.get("k", PIPELINE_DEFAULTS["knn_k"]),
                )
            record(name, started, result)
    except Exception as exc:
        manifest["failed_stage"] = name
        manifest["error"] = str(exc)
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
        raise RuntimeError(f"stage {name!r} failed: {exc}") from exc
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


# ---------------------------------------------------------------------------
# Report rendering


def _tsv_block(header: list[str], rows: list[list]) -> str:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join("" if v is None else str(v) for v in row))
    return "```\n" + "\n".join(lines) + "\n```"


def render_report(manifest: dict) -> str:
    out_dir = Path(manifest["out_dir"])
    sections = [f"# toxtraj run report\n\nroot seed: {manifest['root_seed']}\n"]

    topics_path = out_dir / "topics.json"
    if topics_path.exists():
        topics = TopicTree.load(topics_path)
        counts = level_counts(topics)
        sections.append("## Surviving cluster counts by level\n")
        sections.append(
            _tsv_block(
                ["level", "clusters"], [[lv, c] for lv, c in counts.items()]
            )
        )
        sections.append(f"\noutliers: {topics.n_outliers}\n")

    permanova_path = out_dir / "permanova.json"
    if permanova_path.exists():
        doc = json.loads(permanova_path.read_text())
        sections.append("## Trajectory-pair comparisons\n")
        rows = []
        for row in doc["rows"]:
            if "skipped" in row:
                rows.append([row["freq"], row["pair"], "skipped", "", ""])
                continue
            rows.append(
                [
                    row["freq"],
                    row["pair"],
                    f"{row['pseudo_f']:.4g}",
                    f"{row['p_value']:.4g}",
                    f"{row['eta_squared']:.4g}",
                ]
            )
        sections.append(_tsv_block(["freq", "pair", "pseudo_f", "p", "eta_sq"], rows))

    labeled_path = out_dir / "labeled.json"
    if labeled_path.exists():
        doc = json.loads(labeled_path.read_text())
        for group, payload in doc["groups"].items():
            sections.append(f"## Weekly topic runs: {group}\n")
            rows = [
                [
                    r["week_start"],
                    r["week_end"],
                    r["topic"],
                    None if r["mean_toxicity"] is None else f"{r['mean_toxicity']:.2f}",
                ]
                for r in payload["weekly_table"]
            ]
            sections.append(_tsv_block(["week_from", "week_to", "topic", "mean_toxicity"], rows))

    groups_path = out_dir / "groups.json"
    corpus_posts = out_dir / "corpus" / "posts.ndjson"
    if groups_path.exists() and corpus_posts.exists():
        grouping = GroupingResult.load(groups_path)
        corpus = load_corpus_bundle(out_dir / "corpus")
        window = corpus.window
        week_seconds = window.week_len_days * 86400
        n_weeks = window.n_weeks
        sections.append("## Weekly mean toxicity by group\n")
        by_user = corpus.by_user()
        rows = []
        names = [GROUP_INCREASING, REF_INCREASING, GROUP_DECREASING, REF_DECREASING]
        series = {}
        for name in names:
            sums = np.zeros(n_weeks)
            counts = np.zeros(n_weeks)
            for u in grouping.members(name):
                for post in by_user.get(u, []):
                    if post.toxicity is None:
                        continue
                    week = min((post.timestamp - window.t0) // week_seconds, n_weeks - 1)
                    sums[int(week)] += post.toxicity
                    counts[int(week)] += 1
            with np.errstate(invalid="ignore"):
                series[name] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        for week in range(n_weeks):
            row = [week]
            for name in names:
                value = series[name][week]
                row.append("" if np.isnan(value) else f"{value:.2f}")
            rows.append(row)
        sections.append(_tsv_block(["week"] + names, rows))

    return "\n".join(sections) + "\n"


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toxtraj", description=__doc__)
    parser.add_argument("--version", action="version", version=f"toxtraj {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load, validate, and canonicalize a corpus")
    p.add_argument("--posts", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--out", required=True)
    p.add_argument("--t0")
    p.add_argument("--t-end", dest="t_end")

    p = sub.add_parser("reduce", help="fit-on-sample reduction to k dimensions")
    p.add_argument("--in", dest="src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=PIPELINE_DEFAULTS["reduce_dim"])
    p.add_argument("--fraction", type=float, default=PIPELINE_DEFAULTS["reduce_fraction"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--external", action="store_true", help="pass through pre-reduced vectors")

    p = sub.add_parser("cluster", help="recursive density-based clustering")
    p.add_argument("--in", dest="src", required=True)
    p.add_argument("--min-cluster-size", type=int, required=True)
    p.add_argument("--min-samples", type=int)
    p.add_argument("--max-depth", type=int, default=PIPELINE_DEFAULTS["max_depth"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("merge", help="coherence-gated subcluster merging")
    p.add_argument("--tree", required=True)
    p.add_argument("--corpus", required=True, help="corpus bundle directory")
    p.add_argument("--embeddings", help="reduced embeddings (default: bundle embeddings)")
    p.add_argument("--scorer", default="reference", help="reference | external | constant:N")
    p.add_argument("--alpha", type=float, default=PIPELINE_DEFAULTS["alpha"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=PIPELINE_DEFAULTS["coherence_reps"])
    p.add_argument("--n-in", type=int, default=PIPELINE_DEFAULTS["coherence_n_in"])
    p.add_argument("--n-out", type=int, default=PIPELINE_DEFAULTS["coherence_n_out"])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("groups", help="toxicity-trend user grouping")
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-posts", type=int, default=PIPELINE_DEFAULTS["min_posts"])
    p.add_argument("--alpha", type=float, default=PIPELINE_DEFAULTS["alpha"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("trajectories", help="interpolate user trajectories")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--groups")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("permanova", help="trajectory-pair permutation tests")
    p.add_argument("--traj", required=True, help="daily-grid trajectory file")
    p.add_argument("--groups", required=True)
    p.add_argument("--pair", choices=["increasing", "decreasing", "both"], default="both")
    p.add_argument("--freq", choices=["daily", "weekly", "both"], default="both")
    p.add_argument("--perms", type=int, default=PIPELINE_DEFAULTS["n_permutations"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="result JSON path (default: stdout)")

    p = sub.add_parser("assign", help="label average trajectories with topics")
    p.add_argument("--topics", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--groups", required=True)
    p.add_argument("--k", type=int, default=PIPELINE_DEFAULTS["knn_k"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scenario corpus")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("run", help="run the configured pipeline end to end")
    p.add_argument("--config", required=True)

    p = sub.add_parser("report", help="render a run manifest as markdown")
    p.add_argument("--manifest", required=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ingest":
            result = run_ingest(args.posts, args.embeddings, args.out, args.t0, args.t_end)
        elif args.command == "reduce":
            result = run_reduce(args.src, args.out, args.dim, args.fraction, args.seed, args.external)
        elif args.command == "cluster":
            min_samples = args.min_samples if args.min_samples else args.min_cluster_size
            result = run_cluster(args.src, args.out, args.min_cluster_size, min_samples, args.max_depth)
        elif args.command == "merge":
            result = run_merge(
                args.tree, args.corpus, args.embeddings, args.out, args.scorer,
                args.alpha, args.seed, args.reps, args.n_in, args.n_out, args.workers,
            )
        elif args.command == "groups":
            result = run_groups(args.corpus, args.out, args.min_posts, args.alpha)
        elif args.command == "trajectories":
            result = run_trajectories(args.corpus, args.embeddings, args.out, args.workers)
        elif args.command == "permanova":
            pairs = ["increasing", "decreasing"] if args.pair == "both" else [args.pair]
            freqs = ["daily", "weekly"] if args.freq == "both" else [args.freq]
            result = run_permanova(
                args.traj, args.groups, args.out, pairs, freqs, args.perms, args.seed, args.workers
            )
        elif args.command == "assign":
            result = run_assign(
                args.topics, args.embeddings, args.traj, args.groups, args.out, args.k
            )
        elif args.command == "synth":
            result = run_synth(args.scenario, args.out_dir, args.seed)
        elif args.command == "run":
            config_path = Path(args.config)
            config = json.loads(config_path.read_text())
            manifest = run_pipeline(config, config_dir=config_path.parent)
            print(json.dumps({"stages": [s["name"] for s in manifest["stages"]]}, indent=2))
            return 0
        elif args.command == "report":
            manifest = json.loads(Path(args.manifest).read_text())
            print(render_report(manifest))
            return 0
        else:  # pragma: no cover
            raise SystemExit(2)
    except Exception as exc:
        print(f"toxtraj {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
