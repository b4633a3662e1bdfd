import math
import warnings

import pytest
from hypothesis import given, settings, strategies as st

from fixture_builders import hornet_backend, sentence_backend
from taxoprompt.backend import ScoredSequenceRaw, TableBackend, Token, UniformBackend
from taxoprompt.cache import ScoreCache
from taxoprompt.prompts import PromptTemplate, TemplateError
from taxoprompt.scoring import (BoundaryWarning, PairScore, PartialScoringError,
                                ScoreMode, Scorer, UndefinedScoreError, combine_scores, full_score,
                                rank_candidates, score_pair, selective_score)

SOME_OTHER = PromptTemplate("or_some_other", "{hypo} or some other {hyper}")
IS_AN_THAT = PromptTemplate("is_an_that", "{hypo} is an {hyper} that")
DAGGER = [("dagger", -1.0), (" or", -1.0), (" some", -1.0), (" other", -1.0), (" weapon", -3.0)]


def _seq(tokens):
    text, pos, out = "", 0, []
    for t, lp in tokens:
        out.append(Token(t, pos, pos + len(t), lp))
        pos += len(t)
        text += t
    return ScoredSequenceRaw(text, tuple(out))


def test_full_score_uniform():
    seq = UniformBackend(vocab_size=4, score_first=False).score_text("a b c")
    assert full_score(seq) == pytest.approx(2 * math.log(1 / 4))
    assert full_score(seq) == pytest.approx(-2.7726, abs=1e-4)


def test_full_score_table_sum():
    seq = _seq([("x", -2.0), (" y", -0.5)])
    assert full_score(seq) == -2.5
    assert math.exp(full_score(seq)) == pytest.approx(0.0821, abs=1e-4)


def test_full_score_needs_scored_tokens():
    with pytest.raises(UndefinedScoreError):
        full_score(_seq([("x", None)]))


def test_selective_suffix_sums():
    seq = _seq(DAGGER)
    text = seq.text
    assert selective_score(seq, text.index("weapon")) == -3.0
    assert selective_score(seq, text.index("other")) == -4.0
    assert selective_score(seq, 0) == full_score(seq)
    # stopping at the slot end leaves out any right context
    assert selective_score(seq, text.index("some"), text.index("some") + 4) == -1.0


def test_selective_out_of_range():
    with pytest.raises(ValueError):
        selective_score(_seq(DAGGER), 999)


def test_selective_mid_token_warns_and_falls_back():
    seq = _seq([("dag", -1.0), ("ger", -2.0), (" x", -0.5)])
    with pytest.warns(BoundaryWarning):
        assert selective_score(seq, 4) == -2.5
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        selective_score(seq, 3)
        selective_score(seq, 7)


_LP = st.floats(min_value=-20, max_value=0, allow_nan=False)


@given(st.lists(_LP, min_size=1, max_size=10))
def test_selective_at_zero_equals_full(lps):
    seq = _seq([(f"w{i} ", lp) for i, lp in enumerate(lps)])
    assert selective_score(seq, 0) == full_score(seq)


def test_score_pair_fixture_and_cache():
    b = TableBackend.from_sequences({"dagger or some other weapon": DAGGER})
    scorer = Scorer(b)
    full = scorer.score_pair(SOME_OTHER, "full", "dagger", "weapon")
    assert full.log_score == -7.0 and full.mode is ScoreMode.FULL
    assert scorer.score_pair(SOME_OTHER, ScoreMode.SELECTIVE, "dagger", "weapon").log_score == -3.0
    calls = b.calls
    assert scorer.score_pair(SOME_OTHER, "full", "dagger", "weapon") == full
    assert b.calls == calls
    assert score_pair(b, SOME_OTHER, "full", "dagger", "weapon").log_score == -7.0


def test_selective_span_option_ignores_right_context():
    b = sentence_backend({"wasp is an insect that": -5.0, "wasp is an animal that": -6.0})
    suffix = Scorer(b)
    slot = Scorer(b, selective_span="slot")
    assert suffix.score_pair(IS_AN_THAT, "selective", "wasp", "insect").log_score == -5.0
    # the whole score sits on "that", outside the slot
    assert slot.score_pair(IS_AN_THAT, "selective", "wasp", "insect").log_score == 0.0


def test_selective_needs_slot():
    t = PromptTemplate("c", "{hypo} or {cohypo}")
    scorer = Scorer(UniformBackend())
    assert scorer.score_pair(t, "selective", "cat", cohypo="dog").log_score < 0
    with pytest.raises(TemplateError):
        scorer.score_pair(t, "selective", "cat", hyper="animal")


def test_bundle_scores_mean_of_variants():
    b = sentence_backend({"cat and any other animal": -1.0, "cat and some other animal": -2.0,
                          "cat or any other animal": -3.0, "cat or some other animal": -6.0})
    t = PromptTemplate("andor", "{hypo} (and-or) (any-some) other {hyper}")
    assert Scorer(b).score_pair(t, "full", "cat", "animal").log_score == -3.0


def test_combine_scores():
    a = PairScore("x", "y", "t1", ScoreMode.FULL, -2.0)
    b = PairScore("x", "y", "t2", ScoreMode.FULL, -4.0)
    assert combine_scores([a]) == -2.0
    assert combine_scores([a, b]) == -3.0
    assert combine_scores([b, a]) == -3.0
    assert combine_scores([a, b], "prob") == pytest.approx(math.log((math.exp(-2) + math.exp(-4)) / 2))
    with pytest.raises(ValueError):
        combine_scores([a, PairScore("x", "z", "t2", ScoreMode.FULL, -1.0)])
    with pytest.raises(ValueError):
        combine_scores([a, a])
    with pytest.raises(ValueError):
        combine_scores([])


@given(st.lists(_LP, min_size=1, max_size=6), st.randoms())
def test_combine_permutation_invariant(values, rnd):
    scores = [PairScore("x", "y", f"t{i}", ScoreMode.FULL, v) for i, v in enumerate(values)]
    shuffled = scores[:]
    rnd.shuffle(shuffled)
    assert combine_scores(shuffled) == combine_scores(scores)


def test_rank_candidates_fixture_order_and_ties():
    scorer = Scorer(hornet_backend())
    ranked = scorer.rank_candidates(SOME_OTHER, "full", "hornet", ["object", "insect", "car"])
    assert ranked.ids == ["insect", "object", "car"]
    b = sentence_backend({"h or some other b": -1.0, "h or some other a": -1.0})
    assert rank_candidates(b, SOME_OTHER, "full", "h", ["b", "a"]).ids == ["a", "b"]
    assert Scorer(b).rank_candidates(SOME_OTHER, "full", "h", ["a"]).ids == ["a"]
    with pytest.raises(ValueError):
        scorer.rank_candidates(SOME_OTHER, "full", "hornet", [])
    with pytest.raises(ValueError):
        scorer.rank_candidates(SOME_OTHER, "full", "hornet", ["car", "car"])


def test_rank_candidates_partial_failure():
    scorer = Scorer(hornet_backend())
    with pytest.raises(PartialScoringError) as err:
        scorer.rank_candidates(SOME_OTHER, "full", "hornet", ["insect", "spaceship"])
    assert err.value.partial.ids == ["insect"]
    assert err.value.failures[0][1] == "spaceship"


def test_combination_ranking():
    other = PromptTemplate("t2", "{hypo} is an {hyper} that")
    b = sentence_backend({"h or some other a": -1.0, "h or some other b": -5.0,
                          "h is an a that": -9.0, "h is an b that": -1.0})
    scorer = Scorer(b)
    assert scorer.rank_candidates([SOME_OTHER, other], "full", "h", ["a", "b"]).ids == ["b", "a"]
    with pytest.raises(ValueError):
        scorer.rank_candidates([SOME_OTHER, SOME_OTHER], "full", "h", ["a"])


HAS_MEMBER = PromptTemplate("has_member", "{hyper} has member {hypo}")


@settings(max_examples=40)
@given(st.lists(st.lists(_LP, min_size=3, max_size=3), min_size=2, max_size=6),
       st.floats(min_value=-3, max_value=0))
def test_shift_invariance_equal_lengths(rows, c):
    cands = [f"c{i}" for i in range(len(rows))]

    def backend(shift):
        # the candidate comes first, so every token context is candidate-specific
        return TableBackend.from_sequences({
            f"{w} has member h": [(w, r[0] + shift), (" has", r[1] + shift), (" member", r[2] + shift),
                                  (" h", shift)]
            for w, r in zip(cands, rows)})
    base = Scorer(backend(0.0)).rank_candidates(HAS_MEMBER, "full", "h", cands)
    shifted = Scorer(backend(c)).rank_candidates(HAS_MEMBER, "full", "h", cands)
    gaps = [a.score - b.score for a, b in zip(base.items, base.items[1:])]
    # near-ties can flip under float rounding of the shifted sums
    if all(g > 1e-9 for g in gaps):
        assert base.ids == shifted.ids


@settings(max_examples=30)
@given(st.lists(_LP, min_size=1, max_size=5))
def test_cache_transparency(lps):
    totals = {f"h or some other c{i}": lp for i, lp in enumerate(lps)}
    cands = [f"c{i}" for i in range(len(lps))]
    cached = Scorer(sentence_backend(totals))
    plain = Scorer(sentence_backend(totals), cache=None)
    for mode in ("full", "selective"):
        a, _ = cached.candidate_scores(SOME_OTHER, mode, "h", cands)
        a2, _ = cached.candidate_scores(SOME_OTHER, mode, "h", cands)
        b, _ = plain.candidate_scores(SOME_OTHER, mode, "h", cands)
        assert a == a2 == b


def test_persistent_cache_serves_second_scorer(tmp_path):
    path = tmp_path / "scores.cache"
    b1 = hornet_backend()
    with ScoreCache(path) as cache:
        Scorer(b1, cache=cache).rank_candidates(SOME_OTHER, "selective", "hornet", ["insect", "car"])
    b2 = hornet_backend()
    with ScoreCache(path) as cache:
        ranked = Scorer(b2, cache=cache).rank_candidates(SOME_OTHER, "selective", "hornet", ["insect", "car"])
    assert ranked.ids == ["insect", "car"] and b2.calls == 0


def test_lowercase_option():
    b = sentence_backend({"hornet or some other insect": -1.0})
    assert Scorer(b, lowercase=True).score_pair(SOME_OTHER, "full", "Hornet", "INSECT").log_score == -1.0


def test_parallel_scoring_matches_serial():
    cands = ["insect", "wasp", "object", "animal", "creature", "tree", "car"]
    serial, _ = Scorer(hornet_backend()).candidate_scores(SOME_OTHER, "full", "hornet", cands)
    par, _ = Scorer(hornet_backend(), parallelism=4).candidate_scores(SOME_OTHER, "full", "hornet", cands)
    assert serial == par
