"""Vocabulary and deterministic tokenization.

One shared vocabulary covers column names, cell values, prompts and decode
targets. Words are lowercased alphanumeric runs; numbers are spelled out
digit-by-digit with a fixed 13-symbol grammar so magnitudes survive
tokenization and generated numbers parse back.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from typing import Iterable, Sequence

from .table import DataType, Table, parse_number

PAD, UNK, MASK, CLS, BOS, EOS = 0, 1, 2, 3, 4, 5
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[MASK]", "[CLS]", "[BOS]", "[EOS]")
NUMERIC_SYMBOLS = tuple("0123456789") + (".", "-", "e")

CELL_TOKEN_CAP = 32
PROMPT_TOKEN_CAP = 64

_WORD_RE = re.compile(r"[a-z0-9]+")


class VocabError(ValueError):
    pass


class EmptyCorpusError(VocabError):
    pass


class NonFiniteError(VocabError):
    pass


class InvalidIdError(VocabError):
    pass


def split_words(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation; keeps alphanumeric runs."""
    return _WORD_RE.findall(text.lower())


def number_to_symbols(x: float) -> list[str]:
    """Render x in canonical shortest decimal form as grammar symbols.

    Integral values print without a decimal point; exponents drop the '+'
    sign so every emitted character is one of the 13 grammar symbols.
    """
    if not math.isfinite(x):
        raise NonFiniteError(f"cannot tokenize non-finite number {x!r}")
    if x == int(x) and abs(x) < 1e16:
        text = str(int(x))
    else:
        text = repr(float(x)).replace("+", "")
    return list(text)


class Vocabulary:
    """Immutable token inventory with fixed special-token ids."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:6]) != SPECIAL_TOKENS:
            raise VocabError("vocabulary must start with the six special tokens")
        self._tokens = tuple(tokens)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise VocabError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self._tokens):
            raise InvalidIdError(f"token id {idx} out of range [0, {len(self._tokens)})")
        return self._tokens[idx]

    def numeric_ids(self) -> list[int]:
        return [self._ids[s] for s in NUMERIC_SYMBOLS]


def build_vocab(corpus: Iterable[Table], min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from column names and non-numeric cell values.

    The numeric grammar symbols are always present. Remaining tokens are
    ordered by descending frequency, ties broken lexicographically, and
    tokens rarer than min_count are dropped.
    """
    tables = list(corpus)
    if not tables:
        raise EmptyCorpusError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for table in tables:
        for col in table.schema:
            counts.update(split_words(col.name))
        for j, col in enumerate(table.schema):
            if col.dtype == DataType.NUMERICAL:
                continue
            for row in table.rows:
                if row[j] is not None:
                    counts.update(split_words(row[j]))
    base = set(SPECIAL_TOKENS) | set(NUMERIC_SYMBOLS)
    kept = [
        (tok, c) for tok, c in counts.items() if c >= min_count and tok not in base
    ]
    kept.sort(key=lambda item: (-item[1], item[0]))
    return Vocabulary(SPECIAL_TOKENS + NUMERIC_SYMBOLS + tuple(t for t, _ in kept))


def tokenize_text(text: str, vocab: Vocabulary, cap: int | None = None) -> list[int]:
    """Word-split tokenization; OOV words map to [UNK]; '' yields [[UNK]]."""
    words = split_words(text)
    if not words:
        return [UNK]
    ids = [vocab.id_of(w) for w in words]
    return ids[:cap] if cap else ids


def tokenize_number(x: float, vocab: Vocabulary) -> list[int]:
    return [vocab.id_of(s) for s in number_to_symbols(x)]


def tokenize_cell(
    value: str | None, dtype: DataType, vocab: Vocabulary, cap: int = CELL_TOKEN_CAP
) -> list[int]:
    """Tokenize one cell: missing -> [[MASK]]; numerical cells use the digit
    grammar; everything else is word-split. Output is capped at `cap` tokens."""
    if value is None:
        return [MASK]
    if dtype == DataType.NUMERICAL:
        try:
            return tokenize_number(parse_number(value), vocab)[:cap]
        except ValueError:
            pass  # declared-numerical column holding junk: fall back to words
    return tokenize_text(value, vocab, cap=cap)


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    """Invert tokenization: stop at [EOS], glue numeric-symbol runs together,
    join word tokens with single spaces."""
    numeric = set(NUMERIC_SYMBOLS)
    pieces: list[str] = []
    run: list[str] = []
    for idx in ids:
        tok = vocab.token_of(int(idx))
        if idx == EOS:
            break
        if tok in numeric:
            run.append(tok)
            continue
        if run:
            pieces.append("".join(run))
            run = []
        pieces.append(tok)
    if run:
        pieces.append("".join(run))
    return " ".join(pieces)
