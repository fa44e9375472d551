"""Coherence-gated topic merging.

Every subcluster's coherence (1..5) is sampled repeatedly against the rest
of the corpus; a subcluster survives only when its coherence distribution is
significantly higher than its parent's under a one-sided Mann-Whitney test.
Scoring is pluggable: a deterministic geometric reference scorer, a constant
scorer, or a batch file exchange with an outside rater.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .corpus import Corpus
from .hdbscan import ClusterTree, ClusterTreeNode, HdbscanParams
from .stats import mann_whitney_u
from .util import parallel_map, sha256_bytes, substream

logger = logging.getLogger(__name__)

DEFAULT_REPS = 30
DEFAULT_N_IN = 30
DEFAULT_N_OUT = 30
DEFAULT_ALPHA = 0.05

KEEP = "keep"
MERGE = "merge"

COHERENCE_PROMPT_TEMPLATE = """Task Description:
You are a computational social scientist evaluating the coherence of a specific topic ("Topic A") discovered in a collection of tweets.

Evaluation Process:
1. Examine two sets of tweets:
   - In-topic examples: 30 randomly selected tweets classified as belonging to Topic A.
     {in_topic_examples}
   - Out-topic examples: 30 randomly selected tweets classified as NOT belonging to Topic A.
     {out_topic_examples}

2. Rate the coherence of Topic A on a 5-point Likert scale:
   - 5: Highly coherent.
   - 4: Moderately coherent.
   - 3: Neutral.
   - 2: Somewhat incoherent.
   - 1: Highly incoherent.

Note:
Relevance to U.S. immigration alone does not imply coherence. Evaluate distinctness of subtopics.

Output Format:
Coherence: {{coherence rate}}
"""


@dataclass
class CoherenceRequest:
    """One scoring task: in-node and out-of-node samples for a tree node."""

    node_id: int
    rep: int
    in_rows: np.ndarray
    out_rows: np.ndarray
    in_points: np.ndarray
    out_points: np.ndarray
    in_texts: list
    out_texts: list

    @property
    def task_id(self) -> str:
        payload = json.dumps(
            [self.node_id, self.rep, self.in_rows.tolist(), self.out_rows.tolist()]
        )
        return sha256_bytes(payload.encode("utf-8"))[:16]


class CoherenceScorer(Protocol):
    def score(self, request: CoherenceRequest) -> int: ...


_MARGIN_THRESHOLDS = ((0.0, 1), (0.10, 2), (0.25, 3), (0.45, 4))
_MARGIN_EPS = 1e-12


def reference_coherence_score(in_samples: np.ndarray, out_samples: np.ndarray) -> int:
    """Deterministic geometric coherence proxy.

    margin = (mean inter-set distance - mean intra-in-set distance)
             / (mean inter-set distance + eps),
    mapped onto 1..5 by fixed thresholds (<0, <0.1, <0.25, <0.45, else 5).
    """
    in_samples = np.asarray(in_samples, dtype=np.float64)
    out_samples = np.asarray(out_samples, dtype=np.float64)
    if in_samples.size == 0 or out_samples.size == 0:
        raise ValueError("both sample sets must be non-empty")
    inter = np.sqrt(((in_samples[:, None, :] - out_samples[None, :, :]) ** 2).sum(axis=2))
    mean_inter = float(inter.mean())
    n_in = in_samples.shape[0]
    if n_in > 1:
        intra = np.sqrt(((in_samples[:, None, :] - in_samples[None, :, :]) ** 2).sum(axis=2))
        mean_intra = float(intra.sum() / (n_in * (n_in - 1)))
    else:
        mean_intra = 0.0
    margin = (mean_inter - mean_intra) / (mean_inter + _MARGIN_EPS)
    for threshold, score in _MARGIN_THRESHOLDS:
        if margin < threshold:
            return score
    return 5


class ReferenceCoherenceScorer:
    """Scores requests with the geometric margin proxy."""

    def score(self, request: CoherenceRequest) -> int:
        return reference_coherence_score(request.in_points, request.out_points)


class ConstantCoherenceScorer:
    """Returns a fixed score; useful as a degenerate control."""

    def __init__(self, value: int = 3):
        if value not in (1, 2, 3, 4, 5):
            raise ValueError("constant score must be in 1..5")
        self.value = value

    def score(self, request: CoherenceRequest) -> int:
        return self.value


class PendingExternalScores(RuntimeError):
    """Raised when requests were written and responses are not yet present."""

    def __init__(self, requests_path, responses_path, n_requests):
        super().__init__(
            f"wrote {n_requests} coherence request(s) to {requests_path}; "
            f"place rater responses at {responses_path} and rerun"
        )
        self.requests_path = requests_path
        self.responses_path = responses_path
        self.n_requests = n_requests


class ExternalCoherenceScorer:
    """Batch file exchange with an outside rater.

    Requests are newline-delimited JSON {task_id, node_id, rep, in_texts,
    out_texts, prompt}; responses are {task_id, coherence}. Task ids hash the
    sampled rows, so stale or mismatched responses are rejected.
    """

    def __init__(self, requests_path, responses_path):
        self.requests_path = requests_path
        self.responses_path = responses_path
        self._responses: Optional[dict[str, int]] = None

    def _load_responses(self) -> dict[str, int]:
        responses: dict[str, int] = {}
        with open(self.responses_path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                doc = json.loads(line)
                score = int(doc["coherence"])
                if score not in (1, 2, 3, 4, 5):
                    raise ValueError(f"response line {line_no}: coherence must be 1..5")
                responses[doc["task_id"]] = score
        return responses

    def write_requests(self, requests: list[CoherenceRequest]) -> None:
        with open(self.requests_path, "w", encoding="utf-8") as fh:
            for req in requests:
                in_texts = [t if t is not None else "" for t in req.in_texts]
                out_texts = [t if t is not None else "" for t in req.out_texts]
                doc = {
                    "task_id": req.task_id,
                    "node_id": req.node_id,
                    "rep": req.rep,
                    "in_texts": in_texts,
                    "out_texts": out_texts,
                    "prompt": COHERENCE_PROMPT_TEMPLATE.format(
                        in_topic_examples="\n     ".join(in_texts),
                        out_topic_examples="\n     ".join(out_texts),
                    ),
                }
                fh.write(json.dumps(doc, ensure_ascii=False) + "\n")

    def resolve(self, requests: list[CoherenceRequest]) -> None:
        """Write requests, then load and hash-check responses if present."""
        self.write_requests(requests)
        from pathlib import Path

        if not Path(self.responses_path).exists():
            raise PendingExternalScores(self.requests_path, self.responses_path, len(requests))
        responses = self._load_responses()
        missing = [r.task_id for r in requests if r.task_id not in responses]
        if missing:
            raise ValueError(
                f"{len(missing)} request(s) lack responses (first missing task_id: {missing[0]})"
            )
        self._responses = responses

    def score(self, request: CoherenceRequest) -> int:
        if self._responses is None:
            raise RuntimeError("call resolve(requests) before scoring")
        return self._responses[request.task_id]


@dataclass
class TopicNode(ClusterTreeNode):
    """Cluster tree node annotated with coherence and merge status."""

    coherence_scores: Optional[list[int]] = None
    merged: bool = False
    label: Optional[str] = None
    mean_toxicity: Optional[float] = None


@dataclass
class TopicTree:
    nodes: dict[int, TopicNode]
    n_points: int
    params: HdbscanParams
    n_outliers: int = 0
    alpha: float = DEFAULT_ALPHA
    seed: int = 0

    def surviving(self) -> list[TopicNode]:
        return [n for n in self.nodes.values() if not n.merged]

    def surviving_leaves(self) -> list[TopicNode]:
        survivors = self.surviving()
        parents_with_kids = {n.parent for n in survivors if n.parent is not None}
        return [n for n in survivors if n.node_id not in parents_with_kids]

    def children(self, node_id: int) -> list[TopicNode]:
        return [n for n in self.nodes.values() if n.parent == node_id]

    def topic_of_rows(self) -> np.ndarray:
        """Per-row id of the deepest surviving node containing the row (-1: outlier)."""
        assignment = np.full(self.n_points, -1, dtype=np.int64)
        for node in sorted(self.surviving(), key=lambda n: (n.level, n.node_id)):
            assignment[node.member_rows] = node.node_id
        return assignment

    def to_json(self) -> dict:
        return {
            "n_points": self.n_points,
            "n_outliers": self.n_outliers,
            "alpha": self.alpha,
            "seed": self.seed,
            "params": self.params.to_json(),
            "nodes": [
                {
                    "node_id": n.node_id,
                    "level": n.level,
                    "parent": n.parent,
                    "member_count": n.member_count,
                    "member_rows": n.member_rows.tolist(),
                    "params": n.params_used.to_json(),
                    "coherence_scores": n.coherence_scores,
                    "merged": n.merged,
                    "label": n.label,
                    "mean_toxicity": n.mean_toxicity,
                }
                for n in sorted(self.nodes.values(), key=lambda n: n.node_id)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TopicTree":
        nodes = {}
        for nd in doc["nodes"]:
            nodes[nd["node_id"]] = TopicNode(
                node_id=nd["node_id"],
                level=nd["level"],
                parent=nd["parent"],
                member_rows=np.asarray(nd["member_rows"], dtype=np.int64),
                params_used=HdbscanParams.from_json(nd["params"]),
                coherence_scores=nd.get("coherence_scores"),
                merged=nd.get("merged", False),
                label=nd.get("label"),
                mean_toxicity=nd.get("mean_toxicity"),
            )
        return cls(
            nodes=nodes,
            n_points=doc["n_points"],
            params=HdbscanParams.from_json(doc["params"]),
            n_outliers=doc.get("n_outliers", 0),
            alpha=doc.get("alpha", DEFAULT_ALPHA),
            seed=doc.get("seed", 0),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "TopicTree":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def build_request(
    node: ClusterTreeNode,
    corpus: Corpus,
    rep: int,
    n_in: int,
    n_out: int,
    seed: int,
) -> CoherenceRequest:
    """Sample one rep: n_in rows from the node, n_out from its complement."""
    if corpus.embeddings is None:
        raise ValueError("corpus must carry embeddings for coherence scoring")
    n_total = corpus.embeddings.n
    members = node.member_rows
    if members.size < n_in:
        raise ValueError(
            f"node {node.node_id} has {members.size} member(s), needs at least {n_in}"
        )
    if n_total - members.size < n_out:
        raise ValueError(
            f"complement of node {node.node_id} has {n_total - members.size} row(s), "
            f"needs at least {n_out}"
        )
    rng = substream(seed, "coherence", node.node_id, rep)
    in_rows = np.sort(rng.choice(members, size=n_in, replace=False))
    mask = np.ones(n_total, dtype=bool)
    mask[members] = False
    complement = np.flatnonzero(mask)
    out_rows = np.sort(rng.choice(complement, size=n_out, replace=False))
    values = corpus.embeddings.values
    texts = [corpus.post_for_row(int(r)).text for r in in_rows]
    out_texts = [corpus.post_for_row(int(r)).text for r in out_rows]
    return CoherenceRequest(
        node_id=node.node_id,
        rep=rep,
        in_rows=in_rows,
        out_rows=out_rows,
        in_points=values[in_rows],
        out_points=values[out_rows],
        in_texts=texts,
        out_texts=out_texts,
    )


def coherence_distribution(
    node: ClusterTreeNode,
    corpus: Corpus,
    scorer: CoherenceScorer,
    reps: int = DEFAULT_REPS,
    n_in: int = DEFAULT_N_IN,
    n_out: int = DEFAULT_N_OUT,
    seed: int = 0,
) -> list[int]:
    """reps independent coherence scores for one node."""
    requests = [build_request(node, corpus, rep, n_in, n_out, seed) for rep in range(reps)]
    return [int(scorer.score(req)) for req in requests]


def test_subcluster(child_scores, parent_scores, alpha: float = DEFAULT_ALPHA) -> str:
    """Keep the subcluster iff its coherence is significantly higher than
    the parent's (one-sided Mann-Whitney, strict p < alpha)."""
    if len(child_scores) == 0 or len(parent_scores) == 0:
        raise ValueError("score sequences must be non-empty")
    result = mann_whitney_u(child_scores, parent_scores, alternative="greater")
    return KEEP if result.p_value < alpha else MERGE


def merge_pass(
    tree: ClusterTree | TopicTree,
    corpus: Corpus,
    scorer: CoherenceScorer,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
    reps: int = DEFAULT_REPS,
    n_in: int = DEFAULT_N_IN,
    n_out: int = DEFAULT_N_OUT,
    workers: int = 1,
) -> TopicTree:
    """Score every node, then merge subclusters that fail the coherence gate.

    Bottom-up: each node at level >= 2 is tested against its direct parent;
    a merged node's members revert to the parent and its subtree is
    discarded (flagged merged). Nodes too small to sample are auto-merged
    with a warning.
    """
    if isinstance(tree, TopicTree):
        source_nodes = {nid: n for nid, n in tree.nodes.items() if not n.merged}
    else:
        source_nodes = tree.nodes
    n_points = tree.n_points
    params = tree.params
    if corpus.embeddings is None or corpus.embeddings.n != n_points:
        raise ValueError("corpus embeddings must cover exactly the clustered rows")

    topic_nodes: dict[int, TopicNode] = {}
    for nid, node in source_nodes.items():
        topic_nodes[nid] = TopicNode(
            node_id=node.node_id,
            level=node.level,
            parent=node.parent,
            member_rows=node.member_rows,
            params_used=node.params_used,
            coherence_scores=getattr(node, "coherence_scores", None),
            label=getattr(node, "label", None),
        )

    # Score every node that is large enough; external scorers resolve the
    # whole batch up front so runs are replayable.
    scoreable = [
        n for n in topic_nodes.values() if n.member_rows.size >= n_in and n_points - n.member_rows.size >= n_out
    ]
    all_requests: list[CoherenceRequest] = []
    request_index: dict[tuple[int, int], CoherenceRequest] = {}
    for node in sorted(scoreable, key=lambda n: n.node_id):
        for rep in range(reps):
            req = build_request(node, corpus, rep, n_in, n_out, seed)
            all_requests.append(req)
            request_index[(node.node_id, rep)] = req
    if isinstance(scorer, ExternalCoherenceScorer):
        scorer.resolve(all_requests)

    def score_node(node: TopicNode) -> list[int]:
        return [int(scorer.score(request_index[(node.node_id, rep)])) for rep in range(reps)]

    scores = parallel_map(score_node, sorted(scoreable, key=lambda n: n.node_id), workers=workers)
    for node, node_scores in zip(sorted(scoreable, key=lambda n: n.node_id), scores):
        node.coherence_scores = node_scores

    # Decide bottom-up (deepest first), then discard subtrees of merged nodes.
    for node in sorted(topic_nodes.values(), key=lambda n: -n.level):
        if node.level < 2 or node.parent not in topic_nodes:
            continue
        parent = topic_nodes[node.parent]
        if node.coherence_scores is None or parent.coherence_scores is None:
            logger.warning(
                "node %d auto-merged: node or parent too small to sample coherence",
                node.node_id,
            )
            node.merged = True
            continue
        node.merged = test_subcluster(node.coherence_scores, parent.coherence_scores, alpha) == MERGE
    for node in sorted(topic_nodes.values(), key=lambda n: n.level):
        if node.parent in topic_nodes and topic_nodes[node.parent].merged:
            node.merged = True

    covered = np.zeros(n_points, dtype=bool)
    for node in topic_nodes.values():
        if node.parent is None:
            covered[node.member_rows] = True
    n_outliers = int(n_points - covered.sum())

    for node in topic_nodes.values():
        tox = [corpus.post_for_row(int(r)).toxicity for r in node.member_rows]
        tox = [t for t in tox if t is not None]
        node.mean_toxicity = float(np.mean(tox)) if tox else None

    return TopicTree(
        nodes=topic_nodes,
        n_points=n_points,
        params=params,
        n_outliers=n_outliers,
        alpha=alpha,
        seed=seed,
    )


def level_counts(tree: TopicTree) -> dict[int, int]:
    """Surviving (unmerged) node count per level."""
    counts: dict[int, int] = {}
    for node in tree.surviving():
        counts[node.level] = counts.get(node.level, 0) + 1
    return dict(sorted(counts.items()))
