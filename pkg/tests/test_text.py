import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphsum.errors import ConfigError, ValidationError
from graphsum.text import (BOS, EOS, PAD, PBOUND, RESERVED, UNK, Vocabulary, build_vocab, encode_instance,
                           prepare_record, read_corpus, split_paragraphs, tokenize, write_corpus)


class TestTokenize:
    @pytest.mark.parametrize("text,expected", [
        ("Hello, world!", ["hello", ",", "world", "!"]),
        ("", []),
        ("state-of-the-art", ["state-of-the-art"]),
        ("don't stop", ["don't", "stop"]),
        ("a -- b", ["a", "-", "-", "b"]),
    ])
    def test_examples(self, text, expected):
        assert tokenize(text) == expected

    def test_case_kept_when_asked(self):
        assert tokenize("New York", lower=False) == ["New", "York"]

    @given(st.text(max_size=80))
    def test_tokens_never_contain_whitespace(self, text):
        for tok in tokenize(text):
            assert tok and not any(c.isspace() for c in tok)


class TestSplitParagraphs:
    def test_single_document(self):
        paras, origins = split_paragraphs(["one two\nthree four\nfive six"], 40)
        assert paras == ["one two", "three four", "five six"]
        assert origins == [0, 0, 0]

    def test_budget_spread_over_documents(self):
        docs = ["\n".join(f"d{d} p{k}" for k in range(4)) for d in range(2)]
        paras, origins = split_paragraphs(docs, 4)
        assert paras == ["d0 p0", "d0 p1", "d1 p0", "d1 p1"]
        assert origins == [0, 0, 1, 1]

    def test_short_document_frees_budget_for_others(self):
        docs = ["only", "a\nb\nc\nd"]
        paras, origins = split_paragraphs(docs, 4)
        assert paras == ["only", "a", "b", "c"]
        assert origins == [0, 1, 1, 1]

    def test_long_paragraph_capped_at_70_tokens(self):
        text = " ".join(f"w{k}" for k in range(200))
        paras, _ = split_paragraphs([text], 40, 70)
        assert tokenize(paras[0]) == [f"w{k}" for k in range(70)]

    def test_blank_lines_skipped(self):
        paras, _ = split_paragraphs(["a\n\n   \nb"], 10)
        assert paras == ["a", "b"]

    def test_all_blank_is_an_error(self):
        with pytest.raises(ValidationError):
            split_paragraphs(["", "  \n "], 10)

    @given(st.lists(st.integers(0, 6), min_size=1, max_size=5), st.integers(1, 12))
    def test_cap_and_reading_order(self, sizes, cap):
        docs = ["\n".join(f"d{d}p{k}" for k in range(n)) for d, n in enumerate(sizes)]
        if not any(sizes):
            return
        paras, origins = split_paragraphs(docs, cap)
        assert len(paras) == min(cap, sum(sizes))
        assert origins == sorted(origins)
        keys = [(int(p[1:p.index("p")]), int(p[p.index("p") + 1:])) for p in paras]
        assert keys == sorted(keys)


class TestVocabulary:
    def test_frequency_order(self):
        v = build_vocab([["a", "a", "b"]], min_freq=1)
        assert v.tokens[:len(RESERVED)] == list(RESERVED)
        assert v.id("a") < v.id("b")

    def test_min_freq_drops_rare_tokens(self):
        v = build_vocab([["a", "a", "b"]], min_freq=2)
        assert "a" in v.index and "b" not in v.index
        assert v.encode(["b"]) == [UNK]

    def test_ties_broken_lexicographically(self):
        assert build_vocab([["z", "y", "x"]]).tokens[5:] == ["x", "y", "z"]

    def test_max_size_counts_reserved(self):
        assert len(build_vocab([list("abcdef")], max_size=7)) == 7

    def test_max_size_too_small(self):
        with pytest.raises(ConfigError):
            build_vocab([["a"]], max_size=5)

    def test_round_trip(self, tmp_path):
        v = build_vocab([["x", "y", "y", "z"]])
        v.save(tmp_path / "v.json")
        assert Vocabulary.load(tmp_path / "v.json").index == v.index

    def test_reserved_prefix_enforced(self):
        with pytest.raises(ValidationError):
            Vocabulary(["a", "b"])

    def test_decode_strips_special(self):
        v = build_vocab([["a", "b"]])
        assert v.decode([BOS, v.id("a"), PBOUND, v.id("b"), EOS, PAD]) == ["a", "b"]


class TestEncodeInstance:
    @pytest.fixture
    def vocab(self):
        v = build_vocab([["a", "b"]])
        assert (v.id("a"), v.id("b")) == (5, 6)
        return v

    def test_paragraph_ids(self, vocab):
        assert encode_instance(["a b"], "a", vocab).paragraphs == [[4, 5, 6]]

    def test_summary_ids(self, vocab):
        assert encode_instance(["a b"], "a", vocab).summary == [1, 5, 2]

    def test_oov_maps_to_unk(self, vocab):
        assert encode_instance(["a zzz b"], "a", vocab).paragraphs[0] == [4, 5, 3, 6]

    def test_empty_summary_rejected_only_in_training(self, vocab):
        with pytest.raises(ValidationError):
            encode_instance(["a"], "", vocab)
        assert encode_instance(["a"], "", vocab, training=False).summary == [BOS, EOS]

    def test_summary_cap(self, vocab):
        inst = encode_instance(["a"], "a " * 200, vocab, max_summary_tokens=150)
        assert len(inst.summary) == 152

    def test_no_paragraphs(self, vocab):
        with pytest.raises(ValidationError):
            encode_instance([], "a", vocab)


def test_corpus_round_trip_and_prepare(tmp_path):
    records = [{"documents": ["Alpha beta.\nGamma.", "Delta"], "summary": "alpha delta"}]
    write_corpus(records, tmp_path / "c.jsonl")
    assert read_corpus(tmp_path / "c.jsonl") == records
    v = build_vocab([tokenize("alpha beta . gamma delta")])
    inst = prepare_record(records[0], v)
    assert inst.origins == [0, 0, 1]
    assert all(p[0] == PBOUND for p in inst.paragraphs)


def test_corpus_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"documents": ["a"]}) + "\n{oops\n")
    with pytest.raises(ValidationError, match=":2:"):
        read_corpus(path)
