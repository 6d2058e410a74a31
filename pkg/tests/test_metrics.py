import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labloop.metrics import (
    MetricError,
    MetricSpec,
    Sample,
    corpus_metrics,
    default_lexicon,
    extremal_samples,
    keyword_overlap,
    length_stats,
    rerank_score,
    sentiment_score,
)
from labloop.record import BenchmarkScore, ExperimentResult


def result(*scores):
    return ExperimentResult({s.name: s for s in scores})


def test_bundled_lists_have_expected_sizes():
    lex = default_lexicon()
    assert len(lex.stopwords) == 50
    assert {"the", "is"} <= lex.stopwords
    assert len(lex.positive) + len(lex.negative) >= 180
    assert not lex.positive & lex.negative


def test_length_mean_word_count():
    samples = [Sample(str(i), "", " ".join(["w"] * n)) for i, n in enumerate((3, 5, 7))]
    assert length_stats(samples)["words"].mean == 5


def test_length_of_empty_response():
    stats = length_stats([Sample("a", "q", "")])
    assert stats["chars"].mean == 0 and stats["words"].mean == 0


def test_length_rejects_empty_corpus():
    with pytest.raises(MetricError):
        length_stats([])


def test_duplicate_record_adds_one_to_its_bucket():
    samples = [Sample(str(i), "", "x" * n) for i, n in enumerate((1, 4, 9, 20))]
    before = length_stats(samples)["chars"].histogram
    after = length_stats(samples + [samples[2]])["chars"].histogram
    diff = [b - a for a, b in zip(before, after)]
    assert sorted(diff) == [0] * (len(diff) - 1) + [1]
    assert sum(after) == 5


def test_keyword_overlap_examples():
    assert keyword_overlap("sort the list", "the list is sorted") == pytest.approx(1 / 3)
    assert keyword_overlap("quick brown fox", "quick brown fox") == 1.0
    assert keyword_overlap("alpha beta", "gamma delta") == 0.0


def test_sentiment_examples():
    assert sentiment_score("the cat sat on a mat") == 0.0
    assert sentiment_score("a helpful answer") == 0.5
    assert sentiment_score("Great, clear and correct!") == pytest.approx(3 / 4)


def test_sentiment_swap_negates():
    assert sentiment_score("good bad bad") == -sentiment_score("bad good good")


def test_extremal_examples():
    recs = [Sample("r1", "", "", 0.9), Sample("r2", "", "", 0.1), Sample("r3", "", "", 0.5)]
    assert extremal_samples(recs, 1) == {"best": ["r1"], "worst": ["r2"]}


def test_extremal_ties_use_id_order():
    recs = [Sample(i, "", "", 1.0) for i in ("c", "a", "b")]
    assert extremal_samples(recs, 2) == {"best": ["a", "b"], "worst": ["a", "b"]}


def test_extremal_k_too_large():
    with pytest.raises(MetricError):
        extremal_samples([Sample("a", "", "", 1.0)], 2)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_extremal_full_k_matches_sort(ratings):
    recs = [Sample(f"r{i:03d}", "", "", r) for i, r in enumerate(ratings)]
    out = extremal_samples(recs, len(recs))
    assert out["best"] == [s.id for s in sorted(recs, key=lambda s: (-s.rating, s.id))]
    assert sorted(out["worst"]) == sorted(s.id for s in recs)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=30, unique=True), st.data())
def test_extremal_disjoint_for_distinct_ratings(ratings, data):
    k = data.draw(st.integers(0, len(ratings) // 2))
    recs = [Sample(f"r{i:03d}", "", "", r) for i, r in enumerate(ratings)]
    out = extremal_samples(recs, k)
    assert not set(out["best"]) & set(out["worst"])


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=60), st.text(max_size=60))
def test_unit_metrics_stay_in_range(a, b):
    assert 0.0 <= keyword_overlap(a, b) <= 1.0
    assert -1.0 <= sentiment_score(a) <= 1.0


def test_rerank_mean_of_validation():
    r = result(BenchmarkScore("a", 7.2, "validation"), BenchmarkScore("b", 4.1, "validation"))
    assert rerank_score(r) == pytest.approx(5.65)


def test_rerank_single_score():
    assert rerank_score(result(BenchmarkScore("a", 3.0, "validation"))) == 3.0


def test_rerank_ignores_test_scores():
    r = result(BenchmarkScore("a", 7.2, "validation"), BenchmarkScore("b", 4.1, "validation"),
               BenchmarkScore("held", 9.9, "test"))
    assert rerank_score(r) == pytest.approx(5.65)


def test_rerank_negates_lower_is_better():
    r = result(BenchmarkScore("ppl", 4.0, "validation", higher_is_better=False))
    assert rerank_score(r) == -4.0


def test_rerank_without_validation_scores():
    with pytest.raises(MetricError):
        rerank_score(result(BenchmarkScore("t", 1.0, "test")))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=5), st.floats(-1e6, 1e6))
def test_rerank_invariant_to_sentinel_test_scores(vals, sentinel):
    scores = [BenchmarkScore(f"v{i}", v, "validation") for i, v in enumerate(vals)]
    plain = rerank_score(result(*scores))
    assert rerank_score(result(*scores, BenchmarkScore("sentinel", sentinel, "test"))) == plain


def test_metric_spec_rules():
    assert MetricSpec("length", "corpus").active
    with pytest.raises(MetricError):
        MetricSpec("perplexity", "corpus")
    spec = MetricSpec("emoji_rate", "sample", "agent_generated", "lambda r: 0", active=False)
    assert not spec.active


def test_corpus_metrics_payload_shape():
    recs = [Sample("a", "sort the list", "the list is sorted", 2.0), Sample("b", "x", "great", 1.0)]
    out = corpus_metrics(recs)
    assert set(out) == {"length", "keyword_overlap", "sentiment", "extremal_samples"}
    assert out["extremal_samples"]["best"] == ["a", "b"]
