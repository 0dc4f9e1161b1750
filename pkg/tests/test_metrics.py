import numpy as np
import pytest

from tabrep.metrics import (
    EmptyRefError,
    LengthMismatchError,
    OneClassOnlyError,
    ZeroVarianceError,
    accuracy,
    auc,
    bleu,
    evaluate_files,
    mae,
    r2,
)


def pairwise_auc(scores, labels):
    """O(n^2) oracle: count positive-over-negative wins, ties worth half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_scores_equal(self):
        assert auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_reversed_is_zero(self):
        assert auc([0.1, 0.9], [1, 0]) == 0.0

    def test_matches_pairwise_oracle_exactly(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(4, 40))
            # quantized scores force plenty of ties
            scores = list(np.round(rng.random(n), 1))
            labels = list(rng.integers(0, 2, n))
            if sum(labels) in (0, n):
                labels[0] = 1 - labels[0]
            assert auc(scores, labels) == pairwise_auc(scores, labels)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=30)
        labels = list(rng.integers(0, 2, 30))
        labels[0], labels[1] = 0, 1
        base = auc(list(scores), labels)
        assert auc(list(np.exp(scores)), labels) == base
        assert auc(list(3 * scores + 7), labels) == base

    def test_one_class_rejected(self):
        with pytest.raises(OneClassOnlyError):
            auc([0.1, 0.2], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            auc([0.1], [1, 0])


class TestRegressionMetrics:
    def test_exact_predictions(self):
        gold = [1.0, 2.0, 3.0]
        assert r2(gold, gold) == 1.0
        assert mae(gold, gold) == 0.0

    def test_mean_prediction_gives_zero_r2(self):
        gold = [1.0, 2.0, 3.0, 6.0]
        mean = [3.0] * 4
        assert r2(mean, gold) == pytest.approx(0.0, abs=1e-12)

    def test_matches_closed_form(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            gold = rng.normal(size=12)
            pred = gold + rng.normal(scale=0.3, size=12)
            expected_r2 = 1 - ((gold - pred) ** 2).sum() / ((gold - gold.mean()) ** 2).sum()
            assert r2(list(pred), list(gold)) == pytest.approx(expected_r2, abs=1e-12)
            assert mae(list(pred), list(gold)) == pytest.approx(
                float(np.abs(gold - pred).mean()), abs=1e-12
            )

    def test_zero_variance_rejected(self):
        with pytest.raises(ZeroVarianceError):
            r2([1.0, 2.0], [5.0, 5.0])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            mae([1.0], [1.0, 2.0])


class TestBleu:
    def test_identical_sentence_scores_100(self):
        text = "the quick brown fox jumps over the lazy dog today"
        assert bleu(text, [text]) == pytest.approx(100.0, abs=1e-9)

    def test_disjoint_tokens_score_zero(self):
        pred = " ".join(f"aaa{i}" for i in range(10))
        ref = " ".join(f"bbb{i}" for i in range(10))
        assert bleu(pred, [ref]) < 1.0
        assert bleu(pred, [ref]) == 0.0

    def test_hand_computed_ngram_case(self):
        # pred: "a b c d e"; ref: "a b c x y"
        # p1 = 3/5; p2 = 2/4; p3 = 1/3; p4 = 0/2 -> add-1 -> 1/3
        # lengths equal -> BP = 1
        pred = "a b c d e"
        ref = "a b c x y"
        expected = 100.0 * (0.6 * 0.5 * (1 / 3) * (1 / 3)) ** 0.25
        assert bleu(pred, [ref]) == pytest.approx(expected, abs=1e-9)

    def test_brevity_penalty(self):
        # pred 2 tokens, ref 4 tokens: clipped unigrams 2/2, bigrams 1/1,
        # no tri/quad-grams -> geometric mean 1; BP = exp(1 - 4/2)
        pred = "a b"
        ref = "a b c d"
        expected = 100.0 * np.exp(1 - 4 / 2)
        assert bleu(pred, [ref]) == pytest.approx(expected, abs=1e-9)

    def test_multiple_references_clip(self):
        # best match across references counts
        assert bleu("a a", ["a", "b"]) > bleu("a a", ["b", "c"])

    def test_empty_reference_rejected(self):
        with pytest.raises(EmptyRefError):
            bleu("something", [])

    def test_empty_candidate_scores_zero(self):
        assert bleu("", ["a b c"]) == 0.0


class TestEvaluateFiles:
    def test_auc_from_prediction_csv(self):
        preds = "row_id,prediction,p_no,p_yes\n0,yes,0.2,0.8\n1,no,0.7,0.3\n2,yes,0.4,0.6\n"
        gold = "row_id,value\n0,1\n1,0\n2,1\n"
        assert evaluate_files("auc", preds, gold, positive_label="yes") == 1.0

    def test_auc_defaults_to_last_probability_column(self):
        preds = "row_id,prediction,p_no,p_yes\n0,yes,0.2,0.8\n1,no,0.7,0.3\n"
        gold = "value\n1\n0\n"
        assert evaluate_files("auc", preds, gold) == 1.0

    def test_r2_and_mae(self):
        preds = "row_id,prediction\n0,1.0\n1,2.0\n2,2.5\n"
        gold = "value\n1.0\n2.0\n3.0\n"
        assert evaluate_files("mae", preds, gold) == pytest.approx(0.5 / 3)
        assert evaluate_files("r2", preds, gold) == pytest.approx(1 - 0.25 / 2.0)

    def test_bleu_mean_over_rows(self):
        preds = 'row_id,prediction\n0,"a b c d e"\n1,"x y"\n'
        gold = 'value\n"a b c d e"\n"x y"\n'
        assert evaluate_files("bleu", preds, gold) == pytest.approx(100.0, abs=1e-9)

    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            evaluate_files("f1", "prediction\nx\n", "value\ny\n")


def test_accuracy_helper():
    assert accuracy(["a", "b"], ["a", "c"]) == 0.5
