"""Self-supervised pretraining: multi-cell masking and block-contrastive
learning, alternated per batch with column shuffling and gradient
accumulation.

Multi-cell masking replaces whole cells with [MASK] and decodes each
original value under the prompt "fill in missing value, <column> :" with
one shared encoder pass per row. Contrastive learning encodes two
overlapping column spans of each row; same-row spans are positives and the
anchor spans of the other rows in the batch are the negatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, from_training
from .model import EncoderConfig, Model
from .optim import Adam
from .table import Table
from .tabunit import CellTokens, tokenize_row
from .tensor import Rng, Tensor
from .vocab import (
    EOS,
    PROMPT_TOKEN_CAP,
    Vocabulary,
    build_vocab,
    tokenize_cell,
    tokenize_text,
)

MCM_PROMPT_TEMPLATE = "fill in missing value, {column} :"


class PretrainError(ValueError):
    pass


class AllMissingRowError(PretrainError):
    pass


class TooFewColumnsError(PretrainError):
    pass


class TooFewRowsError(PretrainError):
    pass


class NoValidPairsError(PretrainError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainPlan:
    """Pretraining hyperparameters; defaults follow the reference recipe."""

    mask_rate: float = 0.15
    overlap: float = 0.5
    lr: float = 1e-5
    batch_size: int = 64
    accum_steps: int = 10
    cl_temperature: float = 0.1
    max_steps: int = 0
    seed: int = 0
    objective_cycle: tuple[str, ...] = ("mcm", "cl")
    checkpoint_interval: int = 0  # optimizer steps between snapshots; 0 = final only
    shuffle_columns: bool = True
    vocab_min_count: int = 1

    def __post_init__(self):
        if not 0.0 <= self.mask_rate <= 1.0:
            raise PretrainError("mask_rate must lie in [0, 1]")
        if not 0.0 < self.overlap < 1.0:
            raise PretrainError("overlap must lie in (0, 1)")
        if self.accum_steps < 1:
            raise PretrainError("accum_steps must be >= 1")
        if any(obj not in ("mcm", "cl") for obj in self.objective_cycle):
            raise PretrainError("objective_cycle entries must be 'mcm' or 'cl'")


@dataclass(frozen=True)
class MaskPlan:
    """Cells of one row chosen as prediction targets."""

    row_index: int
    cells: tuple[int, ...]
    values: tuple[str, ...]


def sample_mask(row: tuple, row_index: int, rate: float, rng: Rng) -> MaskPlan:
    """Draw q~U(0,1) per cell; mask the cell when q <= rate. Already-missing
    cells are never targets; when nothing got picked, mask one uniformly
    chosen candidate as the backup."""
    draws = rng.random(len(row))
    candidates = [j for j, v in enumerate(row) if v is not None]
    if not candidates:
        raise AllMissingRowError(f"row {row_index} has no cell left to mask")
    chosen = [j for j in candidates if draws[j] <= rate]
    if not chosen:
        chosen = [candidates[int(rng.integers(0, len(candidates)))]]
    return MaskPlan(row_index, tuple(chosen), tuple(row[j] for j in chosen))


@dataclass(frozen=True)
class BlockPair:
    """Anchor/positive column spans for one row; negatives are the anchor
    spans of the listed other rows."""

    row: int
    anchor_span: tuple[int, int]  # (start, width) in column-order space
    positive_span: tuple[int, int]
    negative_rows: tuple[int, ...]


def block_geometry(n_columns: int, overlap: float) -> tuple[int, int]:
    """Anchor width and positive-span shift; shift 0 marks a degenerate
    (identical-span) setup."""
    width = math.ceil(n_columns / 2)
    shared = math.floor(overlap * width + 0.5)  # round half up
    return width, width - shared


def sample_blocks(n_rows: int, n_columns: int, overlap: float, rng: Rng) -> list[BlockPair]:
    """One anchor/positive span pair shared by the whole batch; every other
    row contributes one negative per anchor."""
    if n_columns < 2:
        raise TooFewColumnsError("contrastive blocks need at least two columns")
    if n_rows < 2:
        raise TooFewRowsError("contrastive batches need at least two rows")
    width, shift = block_geometry(n_columns, overlap)
    if shift == 0:
        return []  # positive would equal the anchor
    anchor = int(rng.integers(0, n_columns - width + 1))
    if anchor + shift + width <= n_columns:
        positive = anchor + shift
    else:
        positive = anchor - shift
    pairs = []
    everyone = range(n_rows)
    for b in everyone:
        pairs.append(
            BlockPair(
                row=b,
                anchor_span=(anchor, width),
                positive_span=(positive, width),
                negative_rows=tuple(o for o in everyone if o != b),
            )
        )
    return pairs


def prompt_ids_for_column(column_name: str, vocab: Vocabulary) -> list[int]:
    text = MCM_PROMPT_TEMPLATE.format(column=column_name)
    return tokenize_text(text, vocab, cap=PROMPT_TOKEN_CAP)


def pad_id_matrix(seqs: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), width), dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=np.float64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def mcm_loss(
    model: Model,
    table: Table,
    plans: list[MaskPlan],
    column_orders: list[list[int]] | None = None,
    training: bool = False,
    rng: Rng | None = None,
) -> Tensor:
    """Masked-cell objective: mean over rows of the mean per-masked-cell
    decoding loss, one encoder pass per row."""
    if not plans:
        raise PretrainError("mcm_loss needs at least one mask plan")
    vocab = model.vocab
    rows = []
    for i, plan in enumerate(plans):
        order = column_orders[i] if column_orders else None
        rows.append(
            tokenize_row(table, plan.row_index, vocab, masked=set(plan.cells), column_order=order)
        )
    packed = model.featurize(rows)
    encoded = model.encode(packed, training=training, rng=rng)

    pair_rows: list[int] = []
    prompts: list[list[int]] = []
    targets: list[list[int]] = []
    weights: list[float] = []
    for i, plan in enumerate(plans):
        for j, value in zip(plan.cells, plan.values):
            col = table.schema[j]
            pair_rows.append(i)
            prompts.append(prompt_ids_for_column(col.name, vocab))
            targets.append(tokenize_cell(value, col.dtype, vocab) + [EOS])
            weights.append(1.0 / (len(plans) * len(plan.cells)))

    gather = np.asarray(pair_rows, dtype=np.int64)
    h_cls = T.take_rows(encoded.h_cls(), gather)
    if model.config.prompt_attn_source == "tabunit":
        source = packed.xtu
    else:
        source = T.slice_axis(encoded.hidden, 1, 1, encoded.hidden.shape[1])
    source = T.take_rows(source, gather)
    source_mask = packed.xtu_mask[gather]

    prompt_ids, prompt_mask = pad_id_matrix(prompts)
    target_ids, target_mask = pad_id_matrix(targets)
    state = _decoder_init_parts(model, h_cls, source, source_mask, prompt_ids, prompt_mask)
    losses = model.decode_train(state, target_ids, target_mask)
    return T.tsum(T.mul_const(losses, np.asarray(weights)))


def _decoder_init_parts(model, h_cls, source, source_mask, prompt_ids, prompt_mask):
    """decoder_init over pre-gathered per-pair tensors."""
    from .model import EncodedRows  # local alias to reuse the attention path
    from .tabunit import PackedRows

    packed = PackedRows(
        seq=source,  # unused by decoder_init
        seq_mask=np.concatenate([np.ones((source.shape[0], 1)), source_mask], axis=1),
        xtu=source,
        xtu_mask=source_mask,
        gates=None,
        alphas=None,
        cell_slots=[],
        n_positions=source.shape[1] + 1,
    )
    shim = EncodedRows(hidden=_prepend(h_cls, source), packed=packed)
    return model.decoder_init(shim, prompt_ids, prompt_mask)


def _prepend(h_cls: Tensor, source: Tensor) -> Tensor:
    b = h_cls.shape[0]
    return T.concat([T.reshape(h_cls, (b, 1, -1)), source], axis=1)


def info_nce(anchors: Tensor, positives: Tensor, temperature: float) -> Tensor:
    """InfoNCE over cosine similarities; negatives for each anchor are the
    other anchors in the batch."""
    b = anchors.shape[0]
    eye = np.eye(b)
    norm_a = _normalize(anchors)
    norm_p = _normalize(positives)
    sim_aa = T.matmul(norm_a, T.transpose(norm_a, (1, 0)))  # (B, B)
    sim_ap = T.tsum(T.mul(norm_a, norm_p), axis=-1)  # (B,)
    scores = T.add(
        T.mul_const(sim_aa, 1.0 - eye),
        T.mul_const(T.reshape(sim_ap, (b, 1)), eye),
    )
    losses = T.cross_entropy(T.scale(scores, 1.0 / temperature), np.arange(b))
    return T.tmean(losses)


def _normalize(x: Tensor) -> Tensor:
    norms = T.maximum_const(T.sqrt(T.tsum(T.mul(x, x), axis=-1, keepdims=True)), 1e-12)
    return T.div(x, norms)


def cl_loss(
    model: Model,
    table: Table,
    row_ids: list[int],
    pairs: list[BlockPair],
    temperature: float = 0.1,
    column_order: list[int] | None = None,
    training: bool = False,
    rng: Rng | None = None,
) -> Tensor:
    """Contrastive objective over block [CLS] vectors."""
    if not pairs:
        raise NoValidPairsError("contrastive batch has no usable block pairs")
    order = column_order if column_order is not None else list(range(table.n_columns))
    vocab = model.vocab
    blocks: list[list[CellTokens]] = []
    for span_pick in ("anchor_span", "positive_span"):
        for pair in pairs:
            start, width = getattr(pair, span_pick)
            cols = order[start : start + width]
            blocks.append(tokenize_row(table, row_ids[pair.row], vocab, column_order=cols))
    packed = model.featurize(blocks)
    encoded = model.encode(packed, training=training, rng=rng)
    h = encoded.h_cls()
    n = len(pairs)
    anchors = T.slice_axis(h, 0, 0, n)
    positives = T.slice_axis(h, 0, n, 2 * n)
    return info_nce(anchors, positives, temperature)


@dataclass
class StepRecord:
    step: int
    objective: str
    loss: float

    def format(self) -> str:
        return f"step={self.step} objective={self.objective} loss={self.loss:.6f}"


def pretrain_loop(
    corpus: list[Table],
    plan: TrainPlan,
    config: EncoderConfig,
    on_checkpoint=None,
    on_log=None,
) -> Checkpoint:
    """Alternate MCM and CL micro-batches, stepping Adam every accum_steps.

    Deterministic given (corpus, plan, seed): every random decision flows
    through per-step child streams of one seeded generator. Emits the
    initial checkpoint, interval snapshots (in optimizer steps), and the
    final state via on_checkpoint(tag, ckpt).
    """
    if not corpus:
        raise PretrainError("pretraining corpus is empty")
    root = Rng(plan.seed)
    vocab = build_vocab(corpus, plan.vocab_min_count)
    model = Model(config, vocab, root.child("model"))
    opt = Adam(model.params, lr=plan.lr)
    opt.zero_grad()

    def snapshot(tag: str, step: int) -> Checkpoint:
        ckpt = from_training(model, opt, step, plan.seed)
        if on_checkpoint:
            on_checkpoint(tag, ckpt)
        return ckpt

    initial = snapshot("initial", 0)
    if plan.max_steps == 0:
        return initial

    mcm_tables = [
        i
        for i, t in enumerate(corpus)
        if any(any(v is not None for v in row) for row in t.rows)
    ]
    cl_tables = [i for i, t in enumerate(corpus) if t.n_columns >= 2 and t.n_rows >= 2]
    if not mcm_tables:
        raise PretrainError("no table has a maskable cell")

    for step in range(plan.max_steps):
        srng = root.child("step", step)
        objective = plan.objective_cycle[step % len(plan.objective_cycle)]
        if objective == "cl" and not cl_tables:
            objective = "mcm"
        loss = _run_micro_batch(model, corpus, plan, objective, srng, mcm_tables, cl_tables)
        if loss is None:  # degenerate contrastive batch: fall back to masking
            objective = "mcm"
            loss = _run_micro_batch(model, corpus, plan, objective, srng, mcm_tables, cl_tables)
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise TrainingDivergedError(
                f"non-finite {objective} loss {loss_value!r} at step {step}"
            )
        T.scale(loss, 1.0 / plan.accum_steps).backward()
        if (step + 1) % plan.accum_steps == 0:
            opt.step()
            opt.zero_grad()
            if plan.checkpoint_interval and opt.step_count % plan.checkpoint_interval == 0:
                snapshot(f"step{step + 1}", step + 1)
        if on_log:
            on_log(StepRecord(step, objective, loss_value))
    return snapshot("final", plan.max_steps)


def _run_micro_batch(model, corpus, plan, objective, srng, mcm_tables, cl_tables):
    table_pool = mcm_tables if objective == "mcm" else cl_tables
    table = corpus[table_pool[int(srng.integers(0, len(table_pool)))]]
    n_rows = table.n_rows
    take = min(plan.batch_size, n_rows) if objective == "cl" else plan.batch_size
    row_ids = [
        int(i)
        for i in srng.child("rows").choice(n_rows, size=min(take, n_rows), replace=False)
    ]
    if objective == "mcm" and take > n_rows:
        extra = srng.child("rows-extra").integers(0, n_rows, size=take - n_rows)
        row_ids += [int(i) for i in extra]

    if objective == "mcm":
        plans = []
        orders = []
        mrng = srng.child("mask")
        for i in row_ids:
            if all(v is None for v in table.rows[i]):
                continue
            plans.append(sample_mask(table.rows[i], i, plan.mask_rate, mrng))
            order = list(range(table.n_columns))
            if plan.shuffle_columns:
                mrng.shuffle(order)
            orders.append(order)
        if not plans:
            return None
        return mcm_loss(
            model, table, plans, column_orders=orders, training=True, rng=srng.child("dropout")
        )

    pairs = sample_blocks(len(row_ids), table.n_columns, plan.overlap, srng.child("blocks"))
    if not pairs:
        return None
    order = list(range(table.n_columns))
    if plan.shuffle_columns:
        srng.child("order").shuffle(order)
    return cl_loss(
        model,
        table,
        row_ids,
        pairs,
        temperature=plan.cl_temperature,
        column_order=order,
        training=True,
        rng=srng.child("dropout"),
    )
