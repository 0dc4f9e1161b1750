"""Downstream protocols: prompt-based finetuning, prediction, imputation,
and row-embedding export.

Finetuning treats the target as one more (masked) column and decodes its
value under the same prompt used in pretraining, so a pretrained checkpoint
and a task checkpoint share the identical input/output contract. Test-time
tables may add or drop columns freely; an absent target column is handled
as a virtual masked cell.
"""

from __future__ import annotations

import csv
import io
import warnings
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, from_training
from .model import Model
from .optim import Adam
from .pretrain import _decoder_init_parts, pad_id_matrix, prompt_ids_for_column
from .table import DataType, Table, parse_number
from .tabunit import CellTokens, tokenize_row
from .tensor import Rng, no_grad
from .vocab import (
    EOS,
    MASK,
    NUMERIC_SYMBOLS,
    PROMPT_TOKEN_CAP,
    Vocabulary,
    detokenize,
    number_to_symbols,
    tokenize_text,
)

TASK_KINDS = ("classify", "regress", "generate")

_KIND_DTYPE = {
    "classify": DataType.CATEGORICAL,
    "regress": DataType.NUMERICAL,
    "generate": DataType.TEXTUAL,
}


class TaskError(ValueError):
    pass


class UnknownTargetError(TaskError):
    pass


class LabelMismatchError(TaskError):
    pass


class NoMissingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    target: str
    labels: tuple[str, ...] = ()
    prompt: str | None = None
    lr: float = 1e-6
    batch_size: int = 8

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise TaskError(f"task kind must be one of {TASK_KINDS}, got {self.kind!r}")
        if self.kind == "classify" and len(self.labels) < 2:
            raise TaskError("classification needs at least two labels")

    @property
    def target_dtype(self) -> DataType:
        return _KIND_DTYPE[self.kind]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "target": self.target,
            "labels": list(self.labels),
            "prompt": self.prompt,
            "lr": self.lr,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSpec":
        return cls(
            kind=data["kind"],
            target=data["target"],
            labels=tuple(data.get("labels") or ()),
            prompt=data.get("prompt"),
            lr=float(data.get("lr", 1e-6)),
            batch_size=int(data.get("batch_size", 8)),
        )


@dataclass
class PredictionRecord:
    row_id: int
    text: str
    probs: dict[str, float] | None = None
    numeric: float | None = None
    unparseable: bool = False


def _target_value_ids(value: str, dtype: DataType, vocab: Vocabulary) -> list[int]:
    """Decode-target tokens for a target value, canonical digits for numbers."""
    if dtype == DataType.NUMERICAL:
        try:
            symbols = number_to_symbols(parse_number(value))
            return [vocab.id_of(s) for s in symbols]
        except ValueError:
            pass
    return tokenize_text(value, vocab)


def _task_prompt_ids(spec: TaskSpec, vocab: Vocabulary) -> list[int]:
    if spec.prompt:
        return tokenize_text(spec.prompt, vocab, cap=PROMPT_TOKEN_CAP)
    return prompt_ids_for_column(spec.target, vocab)


def _tokenize_task_row(
    table: Table, row_index: int, spec: TaskSpec, vocab: Vocabulary
) -> list[CellTokens]:
    """Row tokens with the target cell masked and typed by the task kind;
    an absent target column becomes a virtual masked cell (schema-free)."""
    names = table.column_names()
    target_cell = CellTokens(
        int(spec.target_dtype), tuple(tokenize_text(spec.target, vocab)), (MASK,)
    )
    if spec.target in names:
        j = table.column_index(spec.target)
        cells = tokenize_row(table, row_index, vocab, masked={j})
        cells[j] = target_cell
        return cells
    return tokenize_row(table, row_index, vocab) + [target_cell]


def finetune(
    ckpt: Checkpoint,
    train: Table,
    spec: TaskSpec,
    steps: int,
    seed: int = 0,
    accum_steps: int = 1,
    dev_fraction: float = 0.0,
    early_stop_patience: int | None = None,
    eval_every: int = 50,
    on_log=None,
) -> Checkpoint:
    """Adam finetuning of the masked-target objective; never mutates `ckpt`.

    With early_stop_patience set, a seeded dev split (dev_fraction, default
    10%) is monitored every eval_every steps and the best-dev parameters are
    returned.
    """
    names = train.column_names()
    if spec.target not in names:
        raise UnknownTargetError(f"target column {spec.target!r} not in training schema")
    target_col = train.column_index(spec.target)
    supervised = [
        i for i, row in enumerate(train.rows) if row[target_col] is not None
    ]
    if not supervised:
        raise TaskError("no training row has a target value")
    if spec.kind == "classify":
        observed = {train.rows[i][target_col] for i in supervised}
        missing = observed - set(spec.labels)
        if missing:
            raise LabelMismatchError(f"target values not covered by labels: {sorted(missing)}")

    rng = Rng(seed)
    model = ckpt.build_model()
    if steps == 0:
        return ckpt.copy()
    opt = Adam(model.params, lr=spec.lr)
    opt.zero_grad()
    vocab = model.vocab
    prompt = _task_prompt_ids(spec, vocab)

    if early_stop_patience is not None and dev_fraction <= 0.0:
        dev_fraction = 0.1
    train_ids, dev_ids = _split(supervised, dev_fraction, rng.child("split"))

    best_state = None
    best_dev = float("inf")
    strikes = 0
    for step in range(steps):
        srng = rng.child("step", step)
        batch = _sample_batch(train_ids, spec.batch_size, srng)
        loss = _finetune_loss(model, train, batch, target_col, spec, prompt, srng, training=True)
        T.scale(loss, 1.0 / accum_steps).backward()
        if (step + 1) % accum_steps == 0:
            opt.step()
            opt.zero_grad()
        if on_log:
            on_log({"step": step, "loss": loss.item()})
        if early_stop_patience is not None and dev_ids and (step + 1) % eval_every == 0:
            with no_grad():
                dev_loss = _finetune_loss(
                    model, train, dev_ids, target_col, spec, prompt, srng, training=False
                ).item()
            if dev_loss < best_dev - 1e-6:
                best_dev = dev_loss
                best_state = model.params.state_dict()
                strikes = 0
            else:
                strikes += 1
                if strikes >= early_stop_patience:
                    break
    if best_state is not None:
        model.params.load_state_dict(best_state)
    return from_training(model, opt, ckpt.step + steps, seed, task=spec.to_dict())


def _split(ids: list[int], dev_fraction: float, rng: Rng) -> tuple[list[int], list[int]]:
    if dev_fraction <= 0.0 or len(ids) < 2:
        return list(ids), []
    shuffled = list(ids)
    rng.shuffle(shuffled)
    n_dev = max(1, int(round(dev_fraction * len(shuffled))))
    return shuffled[n_dev:], shuffled[:n_dev]


def _sample_batch(ids: list[int], size: int, rng: Rng) -> list[int]:
    if len(ids) <= size:
        return list(ids)
    picks = rng.child("batch").choice(len(ids), size=size, replace=False)
    return [ids[int(i)] for i in picks]


def _finetune_loss(model, table, row_ids, target_col, spec, prompt, rng, training):
    vocab = model.vocab
    rows = [_tokenize_task_row(table, i, spec, vocab) for i in row_ids]
    targets = [
        _target_value_ids(table.rows[i][target_col], spec.target_dtype, vocab) + [EOS]
        for i in row_ids
    ]
    packed = model.featurize(rows)
    encoded = model.encode(packed, training=training, rng=rng.child("dropout") if training else None)
    b = len(rows)
    prompt_ids, prompt_mask = pad_id_matrix([prompt] * b)
    state = model.decoder_init(encoded, prompt_ids, prompt_mask)
    target_ids, target_mask = pad_id_matrix(targets)
    return T.tmean(model.decode_train(state, target_ids, target_mask))


def _resolve_spec(ckpt: Checkpoint, spec: TaskSpec | None) -> TaskSpec:
    if spec is not None:
        return spec
    if ckpt.task:
        return TaskSpec.from_dict(ckpt.task)
    raise TaskError("no task spec given and the checkpoint carries none")


def predict(
    ckpt: Checkpoint,
    test: Table,
    spec: TaskSpec | None = None,
    chunk_size: int = 64,
) -> list[PredictionRecord]:
    """Score or generate the target column for every row.

    Classification uses constrained scoring over the label set, so outputs
    always lie in it; regression/generation decode greedily and regression
    results are parsed (unparseable outputs flagged, never fatal).
    """
    spec = _resolve_spec(ckpt, spec)
    model = ckpt.build_model()
    vocab = model.vocab
    prompt = _task_prompt_ids(spec, vocab)
    label_seqs = [
        _target_value_ids(lab, spec.target_dtype, vocab) for lab in spec.labels
    ]
    records: list[PredictionRecord] = []
    for start in range(0, test.n_rows, chunk_size):
        row_ids = range(start, min(start + chunk_size, test.n_rows))
        rows = [_tokenize_task_row(test, i, spec, vocab) for i in row_ids]
        with no_grad():
            encoded = model.encode(model.featurize(rows))
            prompt_ids, prompt_mask = pad_id_matrix([prompt] * len(rows))
            state = model.decoder_init(encoded, prompt_ids, prompt_mask)
            if spec.kind == "classify":
                probs = model.label_probs(state, label_seqs)
                for k, i in enumerate(row_ids):
                    dist = {lab: float(probs[k, j]) for j, lab in enumerate(spec.labels)}
                    pick = spec.labels[int(probs[k].argmax())]
                    records.append(PredictionRecord(i, pick, probs=dist))
            else:
                outs = model.generate(state, max_len=32)
                for k, i in enumerate(row_ids):
                    text = detokenize(outs[k], vocab)
                    rec = PredictionRecord(i, text)
                    if spec.kind == "regress":
                        try:
                            rec.numeric = parse_number(text)
                        except ValueError:
                            rec.unparseable = True
                    records.append(rec)
    return records


class NumericGrammar:
    """Token-level DFA over the digit grammar; every completed sequence
    parses as a float. States track sign/integer/fraction/exponent progress."""

    def __init__(self, vocab: Vocabulary):
        ids = {s: vocab.id_of(s) for s in NUMERIC_SYMBOLS}
        self.digits = frozenset(ids[str(i)] for i in range(10))
        self.dot = ids["."]
        self.minus = ids["-"]
        self.e = ids["e"]
        self.eos = EOS

    def start(self) -> int:
        return 0

    ACCEPTING = frozenset({2, 4, 7})

    def allowed(self, state: int, remaining: int) -> list[int]:
        if remaining <= 1:  # last slot: force completion
            if state in self.ACCEPTING:
                return [self.eos]
            return sorted(self.digits)
        table = {
            0: [self.minus, *self.digits],
            1: sorted(self.digits),
            2: [*self.digits, self.dot, self.e, self.eos],
            3: sorted(self.digits),
            4: [*self.digits, self.e, self.eos],
            5: [self.minus, *self.digits],
            6: sorted(self.digits),
            7: [*self.digits, self.eos],
        }
        return table[state]

    def advance(self, state: int, token: int) -> int:
        if token in self.digits:
            return {0: 2, 1: 2, 2: 2, 3: 4, 4: 4, 5: 7, 6: 7, 7: 7}[state]
        if token == self.minus:
            return {0: 1, 5: 6}[state]
        if token == self.dot:
            return 3
        if token == self.e:
            return 5
        raise TaskError(f"token {token} not valid in numeric grammar state {state}")


def impute(ckpt: Checkpoint, table: Table, chunk_size: int = 64) -> Table:
    """Fill every missing cell by decoding under its column's prompt.

    Numerical columns decode through the numeric grammar so the filled text
    always parses. Returns the table unchanged (with a warning) when
    nothing is missing; consequently impute(impute(t)) == impute(t).
    """
    missing = [
        (i, j)
        for i, row in enumerate(table.rows)
        for j in range(table.n_columns)
        if row[j] is None
    ]
    if not missing:
        warnings.warn("table has no missing cells; returning it unchanged", NoMissingWarning)
        return table
    model = ckpt.build_model()
    vocab = model.vocab
    grammar = NumericGrammar(vocab)
    filled: dict[tuple[int, int], str] = {}
    by_row: dict[int, list[int]] = defaultdict(list)
    for i, j in missing:
        by_row[i].append(j)
    row_ids = sorted(by_row)
    for start in range(0, len(row_ids), chunk_size):
        chunk = row_ids[start : start + chunk_size]
        rows = [tokenize_row(table, i, vocab) for i in chunk]
        with no_grad():
            encoded = model.encode(model.featurize(rows))
            pairs = [(k, i, j) for k, i in enumerate(chunk) for j in by_row[i]]
            for numeric_mode in (True, False):
                group = [
                    (k, i, j)
                    for k, i, j in pairs
                    if (table.schema[j].dtype == DataType.NUMERICAL) == numeric_mode
                ]
                if not group:
                    continue
                gather = np.asarray([k for k, _, _ in group], dtype=np.int64)
                h_cls = T.take_rows(encoded.h_cls(), gather)
                source = T.take_rows(encoded.packed.xtu, gather)
                source_mask = encoded.packed.xtu_mask[gather]
                prompts = [
                    prompt_ids_for_column(table.schema[j].name, vocab) for _, _, j in group
                ]
                prompt_ids, prompt_mask = pad_id_matrix(prompts)
                state = _decoder_init_parts(
                    model, h_cls, source, source_mask, prompt_ids, prompt_mask
                )
                outs = model.generate(
                    state, max_len=32, grammar=grammar if numeric_mode else None
                )
                for (k, i, j), toks in zip(group, outs):
                    filled[(i, j)] = detokenize(toks, vocab)
    new_rows = tuple(
        tuple(filled.get((i, j), v) for j, v in enumerate(row))
        for i, row in enumerate(table.rows)
    )
    return Table(table.schema, new_rows)


def embed(ckpt: Checkpoint, table: Table, chunk_size: int = 64) -> np.ndarray:
    """One encoded [CLS] vector per row, row order preserved: (rows, d)."""
    model = ckpt.build_model()
    vocab = model.vocab
    out = np.zeros((table.n_rows, model.config.d), dtype=np.float64)
    for start in range(0, table.n_rows, chunk_size):
        ids = range(start, min(start + chunk_size, table.n_rows))
        rows = [tokenize_row(table, i, vocab) for i in ids]
        with no_grad():
            h = model.encode(model.featurize(rows)).h_cls().data
        out[start : start + len(rows)] = h
    return out


# -- CSV export contracts ----------------------------------------------------


def predictions_to_csv(records: list[PredictionRecord], labels: tuple[str, ...]) -> str:
    """`row_id,prediction[,p_<label>...]` with full-precision probabilities."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["row_id", "prediction"] + [f"p_{lab}" for lab in labels]
    writer.writerow(header)
    for rec in records:
        row = [rec.row_id, rec.text]
        if labels:
            row += [repr(rec.probs[lab]) for lab in labels]
        writer.writerow(row)
    return buf.getvalue()


def embeddings_to_csv(matrix: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["row_id"] + [f"e{i}" for i in range(matrix.shape[1])])
    for i, row in enumerate(matrix):
        writer.writerow([i] + [repr(float(v)) for v in row])
    return buf.getvalue()
