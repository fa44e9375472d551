import json
from datetime import date, datetime, timezone

import numpy as np
import pytest

from toxtraj.corpus import (
    DEFAULT_DAILY_GRID,
    DEFAULT_T0,
    DEFAULT_T_END,
    CorpusError,
    PostRecord,
    StudyWindow,
    apply_toxicity_responses,
    load_corpus,
    load_corpus_bundle,
    normalize_toxicity,
    read_embeddings,
    save_corpus,
    study_window,
    write_embeddings,
    write_posts,
    write_toxicity_requests,
)

T0 = DEFAULT_T0


def write_lines(path, docs):
    with open(path, "w") as fh:
        for doc in docs:
            fh.write(json.dumps(doc) + "\n")


def make_docs():
    return [
        {"post_id": "c", "user_id": "u2", "timestamp": T0 + 50},
        {"post_id": "a", "user_id": "u1", "timestamp": T0 + 100, "toxicity_raw": 3},
        {"post_id": "b", "user_id": "u1", "timestamp": T0 + 10, "text": "hello"},
    ]


class TestNormalizeToxicity:
    def test_endpoints_and_midpoint(self):
        assert normalize_toxicity(1) == 0.0
        assert normalize_toxicity(5) == 100.0
        assert normalize_toxicity(3) == 50.0

    def test_affine_steps(self):
        values = [normalize_toxicity(r) for r in range(1, 6)]
        assert values == sorted(values)
        for lo, hi in zip(values, values[1:]):
            assert hi - lo == 25.0

    @pytest.mark.parametrize("bad", [0, 6, -1, 100])
    def test_out_of_range(self, bad):
        with pytest.raises(CorpusError):
            normalize_toxicity(bad)


class TestStudyWindow:
    def test_defaults(self):
        window = study_window()
        assert window.n_daily_grid == DEFAULT_DAILY_GRID == 194
        assert window.tau_grid().shape == (194,)

    def test_grid_formula(self):
        window = study_window(t0=0, t_end=86400 * 9, n_daily_grid=10)
        grid = window.tau_grid()
        assert np.allclose(grid, np.arange(10) / 9.0)

    def test_paper_window_spans_194_calendar_days(self):
        # Calendar oracle: count days inclusive with datetime.date arithmetic.
        start = datetime.fromtimestamp(DEFAULT_T0, tz=timezone.utc).date()
        end = datetime.fromtimestamp(DEFAULT_T_END, tz=timezone.utc).date()
        assert start == date(2023, 4, 17)
        assert end == date(2023, 10, 27)
        assert (end - start).days + 1 == 194

    def test_invalid_window(self):
        with pytest.raises(CorpusError):
            study_window(t0=100, t_end=100)

    def test_iso_parsing(self):
        window = study_window(t0="2023-04-17T00:00:00Z", t_end="2023-10-27T23:59:00Z")
        assert window.t0 == DEFAULT_T0
        assert window.t_end == DEFAULT_T_END

    def test_n_weeks(self):
        assert study_window().n_weeks == 27


class TestLoadCorpus:
    def test_sorted_by_user_then_time(self, tmp_path):
        path = tmp_path / "posts.ndjson"
        write_lines(path, make_docs())
        corpus = load_corpus(path)
        assert [p.post_id for p in corpus.posts] == ["b", "a", "c"]
        assert corpus.posts[1].toxicity == 50.0

    def test_duplicate_post_id_reports_id(self, tmp_path):
        docs = make_docs() + [{"post_id": "a", "user_id": "u9", "timestamp": T0 + 1}]
        path = tmp_path / "posts.ndjson"
        write_lines(path, docs)
        with pytest.raises(CorpusError, match="'a'"):
            load_corpus(path)

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "posts.ndjson"
        path.write_text('{"post_id": "a", "user_id": "u", "timestamp": 1}\nnot json\n')
        with pytest.raises(CorpusError, match="line 2"):
            load_corpus(path)

    def test_missing_key_line_number(self, tmp_path):
        path = tmp_path / "posts.ndjson"
        write_lines(path, [{"post_id": "a", "timestamp": T0}])
        with pytest.raises(CorpusError, match="line 1"):
            load_corpus(path)

    def test_window_filter_drops_and_counts(self, tmp_path):
        docs = make_docs() + [{"post_id": "z", "user_id": "u1", "timestamp": 5}]
        path = tmp_path / "posts.ndjson"
        write_lines(path, docs)
        corpus = load_corpus(path)
        assert corpus.n_dropped_outside_window == 1
        assert len(corpus) == 3

    def test_order_independent_of_input_permutation(self, tmp_path):
        docs = make_docs()
        p1, p2 = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
        write_lines(p1, docs)
        write_lines(p2, list(reversed(docs)))
        c1, c2 = load_corpus(p1), load_corpus(p2)
        assert [p.post_id for p in c1.posts] == [p.post_id for p in c2.posts]

    def test_toxicity_field_accepted_without_raw(self, tmp_path):
        path = tmp_path / "posts.ndjson"
        write_lines(path, [{"post_id": "a", "user_id": "u", "timestamp": T0, "toxicity": 12.5}])
        corpus = load_corpus(path)
        assert corpus.posts[0].toxicity == 12.5
        assert corpus.posts[0].toxicity_raw is None

    def test_inconsistent_toxicity_pair_rejected(self, tmp_path):
        path = tmp_path / "posts.ndjson"
        write_lines(
            path,
            [{"post_id": "a", "user_id": "u", "timestamp": T0, "toxicity_raw": 3, "toxicity": 10.0}],
        )
        with pytest.raises(CorpusError, match="inconsistent"):
            load_corpus(path)


class TestEmbeddings:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(7, 5)).astype(np.float32).astype(np.float64)
        ids = [f"p{i}" for i in range(7)]
        path = tmp_path / "emb.bin"
        write_embeddings(path, values, ids)
        loaded = read_embeddings(path)
        assert loaded.row_ids == ids
        assert loaded.values.dtype == np.float64
        np.testing.assert_array_equal(loaded.values, values)

    def test_permuted_row_ids_align(self, tmp_path):
        # Round-trip check: brute-force that each post points at its own row.
        rng = np.random.default_rng(1)
        docs = [
            {"post_id": f"p{i}", "user_id": f"u{i % 3}", "timestamp": T0 + i} for i in range(10)
        ]
        posts_path = tmp_path / "posts.ndjson"
        write_lines(posts_path, docs)
        perm = rng.permutation(10)
        values = rng.normal(size=(10, 4)).astype(np.float32).astype(np.float64)
        ids = [f"p{i}" for i in perm]
        emb_path = tmp_path / "emb.bin"
        write_embeddings(emb_path, values, ids)
        corpus = load_corpus(posts_path, embeddings_path=emb_path)
        for post in corpus.posts:
            row = post.embedding_row
            assert corpus.embeddings.row_ids[row] == post.post_id
            expected_row = list(perm).index(int(post.post_id[1:]))
            np.testing.assert_array_equal(corpus.embeddings.values[row], values[expected_row])

    def test_dangling_row_id(self, tmp_path):
        posts_path = tmp_path / "posts.ndjson"
        write_lines(posts_path, make_docs())
        emb_path = tmp_path / "emb.bin"
        write_embeddings(emb_path, np.zeros((1, 2)), ["ghost"])
        with pytest.raises(CorpusError, match="ghost"):
            load_corpus(posts_path, embeddings_path=emb_path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "emb.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 8)
        with pytest.raises(CorpusError, match="magic"):
            read_embeddings(path)

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "emb.bin"
        values = np.array([[np.inf, 0.0]], dtype=np.float64)
        write_embeddings(path, values, ["a"])
        with pytest.raises(CorpusError, match="non-finite"):
            read_embeddings(path)


class TestBundleRoundTrip:
    def test_load_save_load_identity(self, tmp_path):
        rng = np.random.default_rng(2)
        docs = [
            {
                "post_id": f"p{i}",
                "user_id": f"u{i % 4}",
                "timestamp": int(T0 + rng.integers(0, 10**6)),
                "toxicity_raw": int(rng.integers(1, 6)),
                "text": f"text {i}",
            }
            for i in range(20)
        ]
        posts_path = tmp_path / "posts.ndjson"
        write_lines(posts_path, docs)
        values = rng.normal(size=(20, 5)).astype(np.float32).astype(np.float64)
        emb_path = tmp_path / "emb.bin"
        write_embeddings(emb_path, values, [f"p{i}" for i in range(20)])
        corpus = load_corpus(posts_path, embeddings_path=emb_path)
        save_corpus(corpus, tmp_path / "bundle")
        again = load_corpus_bundle(tmp_path / "bundle")
        assert len(again) == len(corpus)
        for p, q in zip(corpus.posts, again.posts):
            assert (p.post_id, p.user_id, p.timestamp, p.text) == (
                q.post_id,
                q.user_id,
                q.timestamp,
                q.text,
            )
            assert p.toxicity_raw == q.toxicity_raw
            assert p.toxicity == q.toxicity
        np.testing.assert_array_equal(
            corpus.embeddings.values[[p.embedding_row for p in corpus.posts]],
            again.embeddings.values[[p.embedding_row for p in again.posts]],
        )

    def test_synthetic_continuous_toxicity_round_trips(self, tmp_path):
        posts = [
            PostRecord(post_id="a", user_id="u", timestamp=T0 + 5, toxicity=37.25),
            PostRecord(post_id="b", user_id="u", timestamp=T0 + 9, toxicity=0.125),
        ]
        path = tmp_path / "posts.ndjson"
        write_posts(path, posts)
        corpus = load_corpus(path)
        assert [p.toxicity for p in corpus.posts] == [37.25, 0.125]


class TestToxicityExchange:
    def test_request_response_round_trip(self, tmp_path):
        docs = [
            {"post_id": "a", "user_id": "u", "timestamp": T0 + 1, "text": "first"},
            {"post_id": "b", "user_id": "u", "timestamp": T0 + 2, "text": "second"},
            {"post_id": "c", "user_id": "u", "timestamp": T0 + 3},
        ]
        posts_path = tmp_path / "posts.ndjson"
        write_lines(posts_path, docs)
        corpus = load_corpus(posts_path)
        req_path = tmp_path / "requests.ndjson"
        n = write_toxicity_requests(corpus.posts, req_path)
        assert n == 2  # post without text is skipped
        requests = [json.loads(line) for line in req_path.read_text().splitlines()]
        assert all("prompt" in r and r["text"] in r["prompt"] for r in requests)
        resp_path = tmp_path / "responses.ndjson"
        with open(resp_path, "w") as fh:
            for r in requests:
                fh.write(json.dumps({"task_id": r["task_id"], "toxicity_raw": 4}) + "\n")
        applied = apply_toxicity_responses(corpus, resp_path)
        assert applied == 2
        assert corpus.post("a").toxicity == 75.0

    def test_unknown_task_id_rejected(self, tmp_path):
        posts_path = tmp_path / "posts.ndjson"
        write_lines(posts_path, [{"post_id": "a", "user_id": "u", "timestamp": T0, "text": "x"}])
        corpus = load_corpus(posts_path)
        resp_path = tmp_path / "responses.ndjson"
        resp_path.write_text(json.dumps({"task_id": "bogus", "toxicity_raw": 2}) + "\n")
        with pytest.raises(CorpusError, match="bogus"):
            apply_toxicity_responses(corpus, resp_path)
