"""Evaluation metrics: ranking AUC, regression R2/MAE, and sentence BLEU."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

import numpy as np

from .vocab import split_words


class MetricError(ValueError):
    pass


class OneClassOnlyError(MetricError):
    pass


class ZeroVarianceError(MetricError):
    pass


class LengthMismatchError(MetricError):
    pass


class EmptyRefError(MetricError):
    pass


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """P(score+ > score-) + 0.5 * P(tie), computed from tie-averaged ranks.

    Equals brute-force pair counting exactly: average ranks and the pairwise
    1.0/0.5 increments are both sums of halves.
    """
    if len(scores) != len(labels):
        raise LengthMismatchError(f"{len(scores)} scores vs {len(labels)} labels")
    y = np.asarray(labels, dtype=np.int64)
    if set(np.unique(y)) - {0, 1}:
        raise MetricError("labels must be 0 or 1")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnlyError("AUC needs both classes present")
    s = np.asarray(scores, dtype=np.float64)
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[order[j + 1]] == s[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * ((i + 1) + (j + 1))  # average 1-based rank
        i = j + 1
    rank_sum = ranks[y == 1].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def r2(pred: Sequence[float], gold: Sequence[float]) -> float:
    if len(pred) != len(gold) or len(gold) == 0:
        raise LengthMismatchError(f"{len(pred)} predictions vs {len(gold)} targets")
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gold, dtype=np.float64)
    ss_tot = float(((g - g.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ZeroVarianceError("targets have zero variance")
    return 1.0 - float(((g - p) ** 2).sum()) / ss_tot


def mae(pred: Sequence[float], gold: Sequence[float]) -> float:
    if len(pred) != len(gold) or len(gold) == 0:
        raise LengthMismatchError(f"{len(pred)} predictions vs {len(gold)} targets")
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gold, dtype=np.float64)
    return float(np.abs(g - p).mean())


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(pred: str, refs: Sequence[str]) -> float:
    """Sentence BLEU-4 on a 0-100 scale: uniform weights, brevity penalty,
    reference-clipped counts.

    Orders 2-4 with zero matches get add-1 smoothing; unigram precision is
    left unsmoothed so fully disjoint sentences score (essentially) zero.
    Orders with no candidate n-grams contribute precision 1.
    """
    refs = [r for r in refs if r is not None]
    if not refs:
        raise EmptyRefError("BLEU needs at least one reference")
    cand = split_words(pred)
    ref_tokens = [split_words(r) for r in refs]
    if not any(ref_tokens):
        raise EmptyRefError("BLEU references are all empty")
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        counts = _ngrams(cand, n)
        total = sum(counts.values())
        if total == 0:
            continue  # p_n treated as 1
        ref_counts = [_ngrams(rt, n) for rt in ref_tokens]
        clipped = 0
        for gram, c in counts.items():
            clipped += min(c, max(rc.get(gram, 0) for rc in ref_counts))
        if clipped == 0:
            if n == 1:
                return 0.0
            precision = 1.0 / (total + 1.0)
        else:
            precision = clipped / total
        log_sum += 0.25 * math.log(precision)
    c_len = len(cand)
    ref_lens = [len(rt) for rt in ref_tokens]
    r_len = min(ref_lens, key=lambda rl: (abs(rl - c_len), rl))
    brevity = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return 100.0 * brevity * math.exp(log_sum)


def accuracy(pred: Sequence[str], gold: Sequence[str]) -> float:
    if len(pred) != len(gold) or not gold:
        raise LengthMismatchError(f"{len(pred)} predictions vs {len(gold)} targets")
    return sum(p == g for p, g in zip(pred, gold)) / len(gold)


# -- file-level evaluation ----------------------------------------------------

METRICS = ("auc", "r2", "mae", "bleu")


def _read_csv_text(text: str) -> tuple[list[str], list[list[str]]]:
    import csv
    import io

    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise MetricError("empty CSV input")
    return rows[0], rows[1:]


def _gold_values(gold_csv: str) -> list[str]:
    header, rows = _read_csv_text(gold_csv)
    lowered = [h.strip().lower() for h in header]
    col = lowered.index("value") if "value" in lowered else len(header) - 1
    return [r[col] for r in rows]


def evaluate_files(
    metric: str, predictions_csv: str, gold_csv: str, positive_label: str | None = None
) -> float:
    """Score a predictions file (from `predict`) against a gold file.

    The gold file is a CSV whose `value` column (or last column) holds the
    references, aligned by row order. For AUC the score comes from the
    `p_<positive_label>` column, defaulting to the last probability column,
    and gold values must be 0/1.
    """
    if metric not in METRICS:
        raise MetricError(f"metric must be one of {METRICS}, got {metric!r}")
    header, rows = _read_csv_text(predictions_csv)
    gold = _gold_values(gold_csv)
    if len(rows) != len(gold):
        raise LengthMismatchError(f"{len(rows)} predictions vs {len(gold)} gold rows")
    if metric == "auc":
        prob_cols = [i for i, h in enumerate(header) if h.startswith("p_")]
        if not prob_cols:
            raise MetricError("AUC needs probability columns (run a classify predict)")
        if positive_label is not None:
            name = f"p_{positive_label}"
            if name not in header:
                raise MetricError(f"no column {name!r} in predictions")
            col = header.index(name)
        else:
            col = prob_cols[-1]
        scores = [float(r[col]) for r in rows]
        labels = [int(v) for v in gold]
        return auc(scores, labels)
    pred_col = header.index("prediction")
    if metric == "bleu":
        values = [bleu(r[pred_col], [g]) for r, g in zip(rows, gold)]
        return float(np.mean(values))
    pred_nums = [float(r[pred_col]) for r in rows]
    gold_nums = [float(g) for g in gold]
    return r2(pred_nums, gold_nums) if metric == "r2" else mae(pred_nums, gold_nums)
