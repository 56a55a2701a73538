import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alpo import metrics
from alpo.backends import EchoGenerator
from alpo.corpus import BilingualPair, ParallelCorpus, SubtitleLine
from alpo.errors import AlignmentError, BackendError, UndefinedCorrelationError
from alpo.sampling import Generator

import oracles

words = st.lists(st.sampled_from(["the", "cat", "sat", "on", "a", "mat", "dog", "ran", "!", ","]),
                 min_size=1, max_size=12).map(" ".join)


def corpus_of(src, tgt):
    pairs = [BilingualPair(SubtitleLine(i, i + 1, s), SubtitleLine(i, i + 1, t)) for i, (s, t) in enumerate(zip(src, tgt))]
    return ParallelCorpus(pairs, "prog", ("zh", "en"))


# --- tokenisation -------------------------------------------------------------------

def test_tokenize_words_punctuation_and_cjk():
    assert metrics.tokenize("Hello, world!") == ["Hello", ",", "world", "!"]
    assert metrics.tokenize("我爱你 ok") == ["我", "爱", "你", "ok"]
    assert metrics.tokenize("สวัสดี") == list("สวัสดี")
    assert metrics.tokenize("don't") == ["don", "'", "t"]


# --- BLEU -----------------------------------------------------------------------------

def test_bleu_fixtures():
    assert metrics.bleu("the cat sat on the mat", ["the cat sat on the mat"]).value == pytest.approx(100.0)
    assert metrics.bleu("x y z", ["a b c"]).value == pytest.approx(0.0, abs=1e-6)
    assert metrics.bleu("the cat sat", ["the cat sat down"]).value == pytest.approx(oracles.BLEU_CAT, rel=1e-12)


def test_bleu_empty_candidate_warns():
    score = metrics.bleu("", ["something"])
    assert score.value == 0.0 and score.warning


def test_bleu_needs_reference():
    with pytest.raises(ValueError):
        metrics.bleu("a", [])


def test_bleu_best_of_multiple_references():
    multi = metrics.bleu("the cat sat", ["a dog ran", "the cat sat"]).value
    assert multi == pytest.approx(100.0)


def test_corpus_bleu_raw_counts():
    assert metrics.corpus_bleu(["a b c d", "e f g h"], [["a b c d"], ["e f g h"]]).value == pytest.approx(100.0)
    # no 4-gram matches anywhere: the raw-count product is zero
    assert metrics.corpus_bleu(["a b c d"], [["a b c x"]]).value == 0.0
    with pytest.raises(AlignmentError):
        metrics.corpus_bleu(["a"], [])


@settings(max_examples=100, deadline=None)
@given(words)
def test_self_scores_are_100(x):
    assert metrics.bleu(x, [x]).value == pytest.approx(100.0)
    assert metrics.chrf_pp(x, [x]).value == pytest.approx(100.0)


@settings(max_examples=100, deadline=None)
@given(words, words)
def test_scores_in_range_and_deterministic(a, b):
    for fn in (metrics.bleu, metrics.chrf_pp):
        v = fn(a, [b]).value
        assert 0.0 <= v <= 100.0
        assert fn(a, [b]).value == v


# --- ChrF++ ---------------------------------------------------------------------------

def test_chrf_fixtures():
    assert metrics.chrf_pp("ab", ["abc"]).value == pytest.approx(oracles.CHRF_AB, rel=1e-12)
    assert metrics.chrf_pp("hello there", ["hello there"]).value == pytest.approx(100.0)
    assert metrics.chrf_pp("abc", ["xyz"]).value == 0.0


def test_chrf_empty():
    s = metrics.chrf_pp("  ", ["x"])
    assert s.value == 0.0 and s.warning


# --- pairwise similarity -------------------------------------------------------------

def test_pairwise_block_structure():
    same = ["the cat sat on the mat", "a dog ran far away now"]
    other = ["zz yy xx ww vv", "qq pp oo nn mm"]
    m = metrics.pairwise_similarity({"A": same, "B": list(same), "C": other})
    v = m.values
    assert np.allclose(np.diag(v), 100.0)
    assert v[0, 1] == pytest.approx(100.0) and v[1, 0] == pytest.approx(100.0)
    assert v[0, 2] == 0.0 and v[2, 1] == 0.0
    csv = m.to_csv().splitlines()
    assert csv[0] == ",A,B,C" and len(csv) == 4


def test_pairwise_transpose_under_swap():
    a = ["the cat sat on the mat today", "a dog ran"]
    b = ["the cat sat on a mat", "a dog ran away quickly"]
    ab = metrics.pairwise_similarity({"a": a, "b": b}).values
    ba = metrics.pairwise_similarity({"b": b, "a": a}).values
    assert ab[0, 1] == pytest.approx(ba[1, 0]) and ab[1, 0] == pytest.approx(ba[0, 1])


def test_pairwise_mismatched_counts():
    with pytest.raises(AlignmentError):
        metrics.pairwise_similarity({"a": ["x"], "b": ["x", "y"]})


# --- back-translation -------------------------------------------------------------------

class ConstantGenerator(Generator):
    def sample(self, prefix, params, count, seed=None):
        return ["qqq zzz"] * count


class BrokenGenerator(Generator):
    def __init__(self, fail_every):
        self.fail_every = fail_every

    def sample(self, prefix, params, count, seed=None):
        if seed % self.fail_every == 0:
            raise BackendError("down")
        return [prefix.rsplit("\n", 1)[-1]] * count


LINES = ["the cat sat on the mat", "a dog ran into the park", "we all went home early"]


def test_backtranslation_identity():
    res = metrics.back_translation_consistency(corpus_of(LINES, LINES), EchoGenerator())
    assert res.bleu.value == pytest.approx(100.0) and res.chrf.value == pytest.approx(100.0)
    assert res.skipped == 0 and not res.unreliable
    assert res.back_translations == LINES


def test_backtranslation_constant_text():
    res = metrics.back_translation_consistency(corpus_of(LINES, LINES), ConstantGenerator())
    assert res.bleu.value == pytest.approx(0.0, abs=1e-6)


def test_backtranslation_skips_and_flags():
    src = [f"line number {i} here" for i in range(10)]
    res = metrics.back_translation_consistency(corpus_of(src, src), BrokenGenerator(5))
    assert res.skipped == 2 and res.total == 10
    assert res.unreliable
    assert res.back_translations[0] is None
    assert json.loads(json.dumps(res.to_dict()))["unreliable"] is True


# --- Spearman and Bland-Altman ---------------------------------------------------------

def test_spearman_examples():
    assert metrics.spearman_rho([1, 2, 3, 4], [1, 2, 3, 4]).value == pytest.approx(1.0)
    assert metrics.spearman_rho([1, 2, 3, 4], [9, 7, 5, 1]).value == pytest.approx(-1.0)
    assert metrics.spearman_rho([1, 2, 3, 4], [1, 3, 2, 4]).value == pytest.approx(0.8)
    with pytest.raises(UndefinedCorrelationError):
        metrics.spearman_rho([1, 2, 3], [5, 5, 5])
    with pytest.raises(ValueError):
        metrics.spearman_rho([1], [1])


def test_average_ranks_ties():
    assert metrics.average_ranks([10, 20, 10, 30]).tolist() == [1.5, 3.0, 1.5, 4.0]


distinct = st.lists(st.integers(-1000, 1000), min_size=2, max_size=30, unique=True)


@settings(max_examples=100, deadline=None)
@given(distinct.flatmap(lambda a: st.tuples(st.just(a), st.permutations(a))))
def test_spearman_matches_rank_formula(pair):
    a, b = pair
    assert metrics.spearman_rho(a, b).value == pytest.approx(oracles.spearman_rank_formula(a, b), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 100), st.integers(0, 100)), min_size=2, max_size=30))
def test_spearman_monotone_invariance(rows):
    a = [x for x, _ in rows]
    b = [y for _, y in rows]
    if len(set(a)) < 2 or len(set(b)) < 2:
        return
    base = metrics.spearman_rho(a, b).value
    moved = metrics.spearman_rho([math.exp(x / 20) for x in a], [3 * y - 7 for y in b]).value
    assert moved == pytest.approx(base, abs=1e-12)


def test_bland_altman_examples():
    same = metrics.bland_altman([1, 2, 3], [1, 2, 3])
    assert (same.mean_difference, same.loa_low, same.loa_high) == (0.0, 0.0, 0.0)
    shifted = metrics.bland_altman([6, 7, 8], [1, 2, 3])
    assert (shifted.mean_difference, shifted.loa_low, shifted.loa_high) == (5.0, 5.0, 5.0)
    with pytest.raises(ValueError):
        metrics.bland_altman([1, 2], [1, 2, 3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=2, max_size=40), st.floats(-50, 50))
def test_bland_altman_oracle_and_shift(rows, c):
    a = [x for x, _ in rows]
    b = [y for _, y in rows]
    stats = metrics.bland_altman(a, b)
    md, lo, hi = oracles.bland_altman_formula(a, b)
    assert stats.mean_difference == pytest.approx(md, abs=1e-12)
    assert stats.loa_low == pytest.approx(lo, abs=1e-9) and stats.loa_high == pytest.approx(hi, abs=1e-9)
    assert stats.loa_low <= stats.mean_difference <= stats.loa_high
    moved = metrics.bland_altman([x + c for x in a], b)
    assert moved.mean_difference == pytest.approx(stats.mean_difference + c, abs=1e-9)
    assert moved.loa_high - moved.loa_low == pytest.approx(stats.loa_high - stats.loa_low, abs=1e-9)


# --- dimension reports --------------------------------------------------------------------

def row(system, evaluator, dim, item, score):
    return {"system": system, "evaluator": evaluator, "dimension": dim, "item_id": item, "score": score}


def test_dimension_single_evaluator_and_average():
    one = metrics.aggregate_dimension_report([row("s", "e1", "vividness", 0, 64)])
    assert one.means == {"s": {"vividness": 64.0}}
    two = metrics.aggregate_dimension_report([row("s", "e1", "accuracy", 0, 60), row("s", "e2", "accuracy", 0, 80)])
    assert two.means["s"]["accuracy"] == 70.0


def test_dimension_demo_average():
    rows = [row("s", "e", "vividness", i, v) for i, v in enumerate([70, 85, 88, 82, 92])]
    assert metrics.aggregate_dimension_report(rows).means["s"]["vividness"] == pytest.approx(83.4)


def test_dimension_gaps():
    rows = [row("a", "e1", "accuracy", 0, 50), row("a", "e2", "accuracy", 0, 70), row("b", "e1", "accuracy", 0, 90)]
    rep = metrics.aggregate_dimension_report(rows)
    assert rep.means["b"]["accuracy"] == 90.0
    assert rep.gaps == [("b", "accuracy", "e2")]
    assert "b" in rep.to_text()
    with pytest.raises(ValueError):
        metrics.aggregate_dimension_report([row("a", "e", "accuracy", 0, 120)])


def test_metric_score_scale_enforced():
    with pytest.raises(ValueError):
        metrics.MetricScore(101.0)
    assert float(metrics.MetricScore(-0.5, scale=(-1.0, 1.0))) == -0.5


def test_json_and_table_output():
    buf = io.StringIO()
    metrics.dump_json({"b": 1, "a": [1, 2]}, buf)
    assert json.loads(buf.getvalue()) == {"a": [1, 2], "b": 1}
    table = metrics.format_table(["x", "value"], [["long name", "1"]])
    assert table.splitlines()[0].startswith("x          value")
