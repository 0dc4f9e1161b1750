import numpy as np
import pytest

from tabrep.table import DataType, table_from_rows
from tabrep.vocab import (
    BOS,
    CLS,
    EOS,
    MASK,
    NUMERIC_SYMBOLS,
    PAD,
    SPECIAL_TOKENS,
    UNK,
    EmptyCorpusError,
    InvalidIdError,
    NonFiniteError,
    Vocabulary,
    build_vocab,
    detokenize,
    number_to_symbols,
    tokenize_cell,
    tokenize_number,
    tokenize_text,
)


def small_vocab(extra=("credit", "amount", "good", "risk")):
    return Vocabulary(SPECIAL_TOKENS + NUMERIC_SYMBOLS + tuple(extra))


class TestBuildVocab:
    def test_special_ids_fixed(self):
        v = small_vocab()
        assert (PAD, UNK, MASK, CLS, BOS, EOS) == (0, 1, 2, 3, 4, 5)
        assert v.tokens[:6] == SPECIAL_TOKENS

    def test_numeric_only_corpus(self):
        t = table_from_rows(["a", "b"], [["1", "2.5"], ["3", "4"]])
        # column names a/b are single letters, still corpus words
        v = build_vocab([t])
        assert set(v.tokens) == set(SPECIAL_TOKENS) | set(NUMERIC_SYMBOLS) | {"a", "b"}

    def test_min_count_infinite(self):
        t = table_from_rows(["a"], [["hello"], ["world"]])
        v = build_vocab([t], min_count=10**9)
        assert v.tokens == SPECIAL_TOKENS + NUMERIC_SYMBOLS

    def test_deterministic(self):
        t = table_from_rows(["name x", "name y"], [["pear apple", "kiwi"], ["apple", "fig"]])
        v1 = build_vocab([t])
        v2 = build_vocab([t])
        assert v1.tokens == v2.tokens

    def test_frequency_then_lexicographic_order(self):
        t = table_from_rows(["c"], [["b b a a z"]])
        v = build_vocab([t])
        tail = v.tokens[len(SPECIAL_TOKENS) + len(NUMERIC_SYMBOLS) :]
        assert tail == ("a", "b", "c", "z")  # a/b twice... ties sorted

    def test_numeric_column_values_excluded_from_words(self):
        t = table_from_rows(["n"], [["123"], ["456"]])
        v = build_vocab([t])
        assert "123" not in v.tokens

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpusError):
            build_vocab([])


class TestTokenizeText:
    def test_splits_and_lowercases(self):
        v = small_vocab()
        assert tokenize_text("Credit Amount", v) == [v.id_of("credit"), v.id_of("amount")]

    def test_oov_becomes_unk(self):
        v = small_vocab()
        ids = tokenize_text("zzz-unseen", v)
        assert UNK in ids

    def test_empty_string(self):
        assert tokenize_text("", small_vocab()) == [UNK]

    def test_pure_functions(self):
        v = small_vocab()
        assert tokenize_text("Credit amount", v) == tokenize_text("Credit amount", v)


class TestNumberGrammar:
    def test_simple_decimal(self):
        assert number_to_symbols(12.5) == ["1", "2", ".", "5"]

    def test_negative_integer(self):
        assert number_to_symbols(-3) == ["-", "3"]

    def test_zero(self):
        assert number_to_symbols(0) == ["0"]

    def test_exponent_has_no_plus(self):
        symbols = number_to_symbols(1e20)
        assert "+" not in symbols
        assert all(s in NUMERIC_SYMBOLS for s in symbols)

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            number_to_symbols(float("inf"))

    def test_roundtrip_10k_random_doubles(self):
        rng = np.random.default_rng(0)
        xs = rng.uniform(-1e6, 1e6, size=10_000)
        for x in xs:
            x = float(x)
            text = "".join(number_to_symbols(x))
            assert abs(float(text) - x) <= 1e-12 * max(1.0, abs(x))

    def test_all_outputs_in_grammar(self):
        rng = np.random.default_rng(1)
        for x in rng.normal(0, 1e8, size=500):
            assert all(s in NUMERIC_SYMBOLS for s in number_to_symbols(float(x)))


class TestTokenizeCell:
    def test_missing_is_mask(self):
        assert tokenize_cell(None, DataType.TEXTUAL, small_vocab()) == [MASK]

    def test_numeric_single_digit(self):
        v = small_vocab()
        assert tokenize_cell("7", DataType.NUMERICAL, v) == [v.id_of("7")]

    def test_cap_at_32(self):
        v = small_vocab()
        long_text = " ".join(["credit"] * 40)
        assert len(tokenize_cell(long_text, DataType.TEXTUAL, v)) == 32

    def test_no_pad_or_cls_in_output(self):
        v = small_vocab()
        for value, dtype in [("credit 77", DataType.TEXTUAL), ("-12.5", DataType.NUMERICAL)]:
            ids = tokenize_cell(value, dtype, v)
            assert PAD not in ids and CLS not in ids


class TestDetokenize:
    def test_numeric_run_joined(self):
        v = small_vocab()
        ids = [v.id_of(s) for s in ["1", "2", ".", "5"]] + [EOS]
        assert detokenize(ids, v) == "12.5"

    def test_words_joined_with_spaces(self):
        v = small_vocab()
        assert detokenize([v.id_of("good"), v.id_of("risk")], v) == "good risk"

    def test_eos_only(self):
        assert detokenize([EOS], small_vocab()) == ""

    def test_stops_at_first_eos(self):
        v = small_vocab()
        assert detokenize([v.id_of("good"), EOS, v.id_of("risk")], v) == "good"

    def test_invalid_id(self):
        v = small_vocab()
        with pytest.raises(InvalidIdError):
            detokenize([len(v) + 5], v)

    def test_inverts_number_tokenization(self):
        v = small_vocab()
        rng = np.random.default_rng(2)
        for x in rng.uniform(-1e4, 1e4, size=200):
            x = float(x)
            assert float(detokenize(tokenize_number(x, v), v)) == pytest.approx(x, rel=1e-12)
