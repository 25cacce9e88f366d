import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphsum.errors import ConfigError, ValidationError
from graphsum.evaluation import (METRICS, RougeScore, evaluate_corpus, lcs_length, lead_baseline, rouge_l,
                                 rouge_n, score_pair)
from graphsum.text import PBOUND

tokens = st.lists(st.sampled_from(list("abcde.")), min_size=1, max_size=15)


def close(score: RougeScore, p, r, f, tol=1e-9):
    assert score.precision == pytest.approx(p, abs=tol)
    assert score.recall == pytest.approx(r, abs=tol)
    assert score.f1 == pytest.approx(f, abs=tol)


class TestRougeN:
    def test_unigram_hand_count(self):
        close(rouge_n("a b c".split(), "a b d".split(), 1), 2 / 3, 2 / 3, 2 / 3)

    def test_bigram_hand_count(self):
        close(rouge_n("a b c".split(), "a b d".split(), 2), 1 / 2, 1 / 2, 1 / 2)

    def test_counts_are_clipped(self):
        close(rouge_n("a a a".split(), "a b".split(), 1), 1 / 3, 1 / 2, 0.4)

    def test_shorter_than_n(self):
        close(rouge_n(["a"], ["a", "b"], 2), 0, 0, 0)

    def test_bad_n(self):
        with pytest.raises(ConfigError):
            rouge_n(["a"], ["a"], 0)

    @given(tokens)
    def test_identity(self, text):
        for n in (1, 2):
            if len(text) >= n:
                close(rouge_n(text, text, n), 1, 1, 1)


class TestRougeL:
    @pytest.mark.parametrize("mode", ["summary", "sentence"])
    def test_hand_lcs(self, mode):
        close(rouge_l("a c b".split(), "a b c".split(), mode), 2 / 3, 2 / 3, 2 / 3)

    def test_lcs_length(self):
        assert lcs_length("a b c b d a b".split(), "b d c a b a".split()) == 4

    def test_empty_candidate(self):
        close(rouge_l([], ["a"]), 0, 0, 0)

    def test_union_lcs_over_sentences(self):
        # reference sentence "a b c d ." against candidate sentences "a b ." and "c d .":
        # union of LCS positions covers a, b, c, d and one "."
        ref = "a b c d .".split()
        cand = "a b . c d .".split()
        s = rouge_l(cand, ref, "summary")
        close(s, 5 / 6, 5 / 5, 2 * (5 / 6) / (5 / 6 + 1))
        assert rouge_l(cand, ref, "sentence").recall == pytest.approx(5 / 5)

    @given(tokens)
    def test_identity_both_modes(self, text):
        for mode in ("summary", "sentence"):
            close(rouge_l(text, text, mode), 1, 1, 1)

    @given(st.lists(st.sampled_from(list("abcd")), min_size=1, max_size=10),
           st.lists(st.sampled_from(list("abcd")), min_size=1, max_size=10))
    def test_modes_agree_on_single_sentences(self, a, b):
        assert rouge_l(a, b, "summary") == rouge_l(a, b, "sentence")

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            rouge_l(["a"], ["a"], "document")


class TestLead:
    def test_first_k_tokens(self):
        assert lead_baseline([["a", "b", "c", "d"]], 3) == ["a", "b", "c"]

    def test_k_exceeds_input(self):
        assert lead_baseline([["a", "b"], ["c"]], 10) == ["a", "b", "c"]

    def test_boundary_markers_skipped(self):
        assert lead_baseline([[PBOUND, 5, 6], [PBOUND, 7]], 3) == [5, 6, 7]
        assert lead_baseline([["<p>", "x"]], 5) == ["x"]

    def test_deterministic(self):
        paras = [["a", "b"], ["c", "d", "e"]]
        assert lead_baseline(paras, 4) == lead_baseline(paras, 4)

    def test_k_must_be_positive(self):
        with pytest.raises(ConfigError):
            lead_baseline([["a"]], 0)


class TestCorpus:
    def test_perfect_system(self):
        refs = ["a b c .".split(), "d e .".split()]
        report = evaluate_corpus(refs, refs)
        for m in METRICS:
            assert report["aggregate"][m] == {"precision": 100.0, "recall": 100.0, "f1": 100.0}

    def test_single_pair(self):
        cand, ref = "a b c".split(), "a b d".split()
        report = evaluate_corpus([cand], [ref])
        for m, s in score_pair(cand, ref).items():
            assert report["aggregate"][m]["f1"] == round(100 * s.f1, 2)

    def test_two_pair_mean(self):
        report = evaluate_corpus(["a b c".split(), "a c b".split()], ["a b d".split(), "a b c".split()])
        # ROUGE-1 F1: 2/3 and 1; ROUGE-2 F1: 1/2 and 0
        assert report["aggregate"]["rouge-1"]["f1"] == round(100 * (2 / 3 + 1) / 2, 2)
        assert report["aggregate"]["rouge-2"]["f1"] == 25.0
        assert report["count"] == 2 and len(report["instances"]) == 2

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            evaluate_corpus([["a"]], [])

    def test_empty(self):
        with pytest.raises(ValidationError):
            evaluate_corpus([], [])
