import warnings

import numpy as np
import pytest

from conftest import comparison_table

from tabrep.checkpoint import new_checkpoint
from tabrep.metrics import auc
from tabrep.model import EncoderConfig
from tabrep.pretrain import TrainPlan, pretrain_loop
from tabrep.table import DataType, drop_columns, permute_columns, table_from_rows
from tabrep.tasks import (
    LabelMismatchError,
    NoMissingWarning,
    NumericGrammar,
    TaskError,
    TaskSpec,
    UnknownTargetError,
    embed,
    embeddings_to_csv,
    finetune,
    impute,
    predict,
    predictions_to_csv,
)
from tabrep.vocab import EOS, build_vocab


CLASSIFY = TaskSpec(kind="classify", target="label", labels=("no", "yes"), lr=3e-3)


@pytest.fixture(scope="module")
def base_ckpt():
    table = comparison_table(60, seed=0)
    vocab = build_vocab([table])
    config = EncoderConfig.from_preset("tiny", dropout=0.0)
    return table, new_checkpoint(config, vocab, seed=1)


class TestTaskSpec:
    def test_classify_needs_two_labels(self):
        with pytest.raises(TaskError):
            TaskSpec(kind="classify", target="y", labels=("only",))

    def test_kind_validated(self):
        with pytest.raises(TaskError):
            TaskSpec(kind="rank", target="y")

    def test_roundtrip(self):
        spec = TaskSpec(kind="generate", target="note", prompt="describe the row :")
        assert TaskSpec.from_dict(spec.to_dict()) == spec


class TestFinetune:
    def test_zero_steps_returns_equal_checkpoint(self, base_ckpt):
        table, ckpt = base_ckpt
        out = finetune(ckpt, table, CLASSIFY, steps=0)
        assert all(np.array_equal(out.params[k], ckpt.params[k]) for k in ckpt.params)

    def test_never_mutates_input_checkpoint(self, base_ckpt):
        table, ckpt = base_ckpt
        before = {k: v.copy() for k, v in ckpt.params.items()}
        finetune(ckpt, table, CLASSIFY, steps=5, seed=0)
        assert all(np.array_equal(ckpt.params[k], before[k]) for k in before)

    def test_unknown_target(self, base_ckpt):
        table, ckpt = base_ckpt
        with pytest.raises(UnknownTargetError):
            finetune(ckpt, table, TaskSpec(kind="regress", target="nope"), steps=1)

    def test_label_mismatch(self, base_ckpt):
        table, ckpt = base_ckpt
        bad = TaskSpec(kind="classify", target="label", labels=("maybe", "dunno"))
        with pytest.raises(LabelMismatchError):
            finetune(ckpt, table, bad, steps=1)

    def test_deterministic_given_seed(self, base_ckpt):
        table, ckpt = base_ckpt
        a = finetune(ckpt, table, CLASSIFY, steps=6, seed=9)
        b = finetune(ckpt, table, CLASSIFY, steps=6, seed=9)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)

    def test_separable_task_reaches_high_train_auc(self, base_ckpt):
        table, ckpt = base_ckpt
        tuned = finetune(ckpt, table, CLASSIFY, steps=400, seed=3)
        records = predict(tuned, table, CLASSIFY)
        scores = [r.probs["yes"] for r in records]
        labels = [1 if row[-1] == "yes" else 0 for row in table.rows]
        assert auc(scores, labels) >= 0.95

    def test_early_stopping_returns_best_dev_params(self, base_ckpt):
        table, ckpt = base_ckpt
        tuned = finetune(
            ckpt, table, CLASSIFY, steps=60, seed=4, early_stop_patience=2, eval_every=10
        )
        assert tuned.step == ckpt.step + 60  # step counter reflects requested budget


@pytest.fixture(scope="module")
def tuned(base_ckpt):
    table, ckpt = base_ckpt
    return table, finetune(ckpt, table, CLASSIFY, steps=250, seed=3)


class TestPredict:

    def test_classify_outputs_stay_in_label_set(self, tuned):
        table, ckpt = tuned
        for rec in predict(ckpt, table, CLASSIFY):
            assert rec.text in CLASSIFY.labels
            assert sum(rec.probs.values()) == pytest.approx(1.0, abs=1e-6)

    def test_extra_column_tolerated(self, tuned):
        table, ckpt = tuned
        wider = table_from_rows(
            table.column_names() + ["bonus"],
            [list(row) + ["something new"] for row in table.rows],
        )
        recs = predict(ckpt, wider, CLASSIFY)
        assert len(recs) == wider.n_rows
        again = predict(ckpt, wider, CLASSIFY)
        assert [r.text for r in recs] == [r.text for r in again]

    def test_missing_target_column_tolerated(self, tuned):
        table, ckpt = tuned
        stripped = drop_columns(table, {"label"})
        recs = predict(ckpt, stripped, CLASSIFY)
        assert len(recs) == stripped.n_rows
        assert all(r.text in CLASSIFY.labels for r in recs)

    def test_stored_task_used_when_spec_omitted(self, tuned):
        table, ckpt = tuned
        assert ckpt.task is not None
        recs = predict(ckpt, table)
        assert all(r.text in CLASSIFY.labels for r in recs)

    def test_regress_parses_or_flags(self, base_ckpt):
        table, ckpt = base_ckpt
        spec = TaskSpec(kind="regress", target="x1", lr=1e-3)
        recs = predict(ckpt, table, spec)
        for rec in recs:
            assert rec.unparseable or rec.numeric is not None

    def test_predictions_csv_format(self, tuned):
        table, ckpt = tuned
        text = predictions_to_csv(predict(ckpt, table, CLASSIFY)[:2], CLASSIFY.labels)
        lines = text.strip().split("\n")
        assert lines[0] == "row_id,prediction,p_no,p_yes"
        assert len(lines) == 3


class TestImpute:
    def test_no_missing_warns_and_returns_identity(self, base_ckpt):
        table, ckpt = base_ckpt
        with pytest.warns(NoMissingWarning):
            out = impute(ckpt, table)
        assert out == table

    def test_fills_every_hole_and_keeps_rest(self, base_ckpt):
        table, ckpt = base_ckpt
        rows = [list(r) for r in table.rows[:6]]
        rows[0][0] = None
        rows[3][2] = None
        holey = table_from_rows(table.column_names(), rows, [c.dtype for c in table.schema])
        filled = impute(ckpt, holey)
        assert all(all(v is not None for v in row) for row in filled.rows)
        for i, row in enumerate(holey.rows):
            for j, v in enumerate(row):
                if v is not None:
                    assert filled.rows[i][j] == v

    def test_numeric_fill_parses(self, base_ckpt):
        table, ckpt = base_ckpt
        holey = table_from_rows(
            table.column_names(),
            [[None, "3", "red", "hi", "yes"]],
            [c.dtype for c in table.schema],
        )
        filled = impute(ckpt, holey)
        float(filled.rows[0][0])  # must parse

    def test_idempotent(self, base_ckpt):
        table, ckpt = base_ckpt
        holey = table_from_rows(
            table.column_names(),
            [["1", None, "red", None, "no"], ["7", "2", None, "hi", None]],
            [c.dtype for c in table.schema],
        )
        once = impute(ckpt, holey)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            twice = impute(ckpt, once)
        assert once == twice

    def test_overfit_recovery_of_known_cell(self, base_ckpt):
        """A model overfit with a fixed masked cell reproduces it exactly."""
        from tabrep.checkpoint import from_training
        from tabrep.model import Model
        from tabrep.optim import Adam
        from tabrep.pretrain import MaskPlan, mcm_loss
        from tabrep.tensor import Rng
        from tabrep.vocab import build_vocab

        table, _ = base_ckpt
        tiny = table_from_rows(table.column_names(), [list(r) for r in table.rows[:4]])
        vocab = build_vocab([tiny])
        model = Model(EncoderConfig.from_preset("tiny", dropout=0.0), vocab, Rng(1))
        opt = Adam(model.params, lr=3e-3)
        plans = [MaskPlan(i, (3,), (tiny.rows[i][3],)) for i in range(4)]
        for _ in range(300):
            opt.zero_grad()
            mcm_loss(model, tiny, plans).backward()
            opt.step()
        ckpt = from_training(model, opt, step=300, seed=1)

        rows = [list(r) for r in tiny.rows]
        hidden = [row[3] for row in rows]
        for row in rows:
            row[3] = None
        holey = table_from_rows(tiny.column_names(), rows, [c.dtype for c in tiny.schema])
        filled = impute(ckpt, holey)
        assert [row[3] for row in filled.rows] == hidden


class TestNumericGrammar:
    def test_every_path_parses(self, base_ckpt):
        table, ckpt = base_ckpt
        vocab = ckpt.vocab
        grammar = NumericGrammar(vocab)
        rng = np.random.default_rng(0)
        for _ in range(300):
            state = grammar.start()
            emitted = []
            for remaining in range(12, 0, -1):
                allowed = grammar.allowed(state, remaining)
                tok = int(allowed[int(rng.integers(0, len(allowed)))])
                if tok == EOS:
                    break
                emitted.append(tok)
                state = grammar.advance(state, tok)
            text = "".join(vocab.token_of(t) for t in emitted)
            float(text)  # never raises


class TestEmbed:
    def test_shape_and_row_order(self, base_ckpt):
        table, ckpt = base_ckpt
        single = embed(ckpt, table_from_rows(table.column_names(), [table.rows[0]]))
        assert single.shape == (1, 64)
        full = embed(ckpt, table)
        np.testing.assert_allclose(full[0], single[0], atol=2e-6)

    def test_column_permutation_stability(self, base_ckpt):
        table, ckpt = base_ckpt
        perm = [4, 2, 0, 1, 3]
        permuted = permute_columns(table, perm)
        a = embed(ckpt, table)
        b = embed(ckpt, permuted)
        assert np.abs(a - b).max() <= 1e-5

    def test_csv_export_shape(self, base_ckpt):
        table, ckpt = base_ckpt
        text = embeddings_to_csv(embed(ckpt, table)[:3])
        lines = text.strip().split("\n")
        assert lines[0].startswith("row_id,e0,")
        assert len(lines) == 4
        assert len(lines[1].split(",")) == 65
