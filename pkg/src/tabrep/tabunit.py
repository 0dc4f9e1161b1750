"""Per-cell featurizer: dtype-gated column-name fusion and value linking.

Each cell becomes 1+q vectors: a column-name vector v_cn blended with a
data-type embedding through a sigmoid gate that depends only on the dtype,
followed by q value-token vectors that each receive the same alpha-weighted
injection of v_cn. Positional embeddings restart at zero inside every token
sequence, so a row's representation is invariant to column order up to
floating-point round-off.

The single-cell functions are the reference semantics; ``featurize_rows``
is the batched equivalent used by training and inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .optim import ParamSet
from .table import DataType, Table
from .tensor import Tensor
from .vocab import CELL_TOKEN_CAP, MASK, Vocabulary, tokenize_cell, tokenize_text


class FeaturizeError(ValueError):
    pass


class EmptySeqError(FeaturizeError):
    pass


@dataclass(frozen=True)
class CellTokens:
    """One tokenized cell: dtype code, column-name tokens, value tokens."""

    dtype_id: int
    name_ids: tuple[int, ...]
    value_ids: tuple[int, ...]

    def width(self) -> int:
        return 1 + len(self.value_ids)


def tokenize_row(
    table: Table,
    row_index: int,
    vocab: Vocabulary,
    masked: set[int] | None = None,
    column_order: list[int] | None = None,
) -> list[CellTokens]:
    """Tokenize one row; cells listed in `masked` are replaced by [MASK]."""
    masked = masked or set()
    order = column_order if column_order is not None else range(table.n_columns)
    row = table.rows[row_index]
    cells = []
    for j in order:
        col = table.schema[j]
        name_ids = tuple(tokenize_text(col.name, vocab, cap=CELL_TOKEN_CAP))
        value = None if j in masked else row[j]
        value_ids = tuple(tokenize_cell(value, col.dtype, vocab))
        cells.append(CellTokens(int(col.dtype), name_ids, value_ids))
    return cells


# ---------------------------------------------------------------------------
# single-cell reference path
# ---------------------------------------------------------------------------


def embed_name(name_ids, params: ParamSet) -> Tensor:
    """Mean over tokens of word+positional embeddings, positions local."""
    ids = np.asarray(name_ids, dtype=np.int64)
    if ids.size == 0:
        raise EmptySeqError("column name has no tokens")
    word = T.embedding(params["emb.word"], ids)
    pos = T.embedding(params["emb.pos"], np.arange(ids.size))
    return T.tmean(T.add(word, pos), axis=0)


def fuse_dtype(x_cn: Tensor, dtype: int, params: ParamSet) -> tuple[Tensor, Tensor]:
    """Blend the name vector with the dtype embedding; the gate sees only
    the dtype, so same-dtype columns share one gate value exactly."""
    x_dt = T.embedding(params["emb.dtype"], np.asarray(int(dtype)))
    hidden = T.relu(T.add(T.matmul(T.reshape(x_dt, (1, -1)), params["fuse.w"]), params["fuse.b"]))
    g = T.sigmoid(T.tsum(T.mul(hidden, params["fuse.v"])))
    one_minus = T.add_const(T.scale(g, -1.0), 1.0)
    v_cn = T.add(T.mul(one_minus, x_cn), T.mul(g, x_dt))
    return v_cn, g


def link_values(v_cn: Tensor, value_embeds: Tensor, params: ParamSet) -> tuple[Tensor, Tensor]:
    """Inject alpha * v_cn into every value vector of the cell; alpha is one
    scalar per cell."""
    hidden = T.relu(T.add(T.matmul(T.reshape(v_cn, (1, -1)), params["link.w"]), params["link.b"]))
    alpha = T.sigmoid(T.tsum(T.mul(hidden, params["link.v"])))
    v_cv = T.add(value_embeds, T.mul(alpha, v_cn))
    return v_cv, alpha


def embed_values(value_ids, params: ParamSet) -> Tensor:
    ids = np.asarray(value_ids, dtype=np.int64)
    if ids.size == 0:
        raise EmptySeqError("cell value has no tokens")
    word = T.embedding(params["emb.word"], ids)
    pos = T.embedding(params["emb.pos"], np.arange(ids.size))
    return T.add(word, pos)


def tab_unit(cell: CellTokens, params: ParamSet) -> tuple[Tensor, Tensor, Tensor]:
    """Featurize one cell; returns ((1+q, d) vectors, gate, alpha)."""
    x_cn = embed_name(cell.name_ids, params)
    v_cn, g = fuse_dtype(x_cn, cell.dtype_id, params)
    values = embed_values(cell.value_ids, params)
    v_cv, alpha = link_values(v_cn, values, params)
    out = T.concat([T.reshape(v_cn, (1, -1)), v_cv], axis=0)
    return out, g, alpha


# ---------------------------------------------------------------------------
# batched path
# ---------------------------------------------------------------------------


@dataclass
class PackedRows:
    """Batched TabUnit output, padded and CLS-prefixed for the encoder."""

    seq: Tensor  # (B, 1+N, d): [CLS] + concatenated cell vectors
    seq_mask: np.ndarray  # (B, 1+N) 1.0 at valid positions
    xtu: Tensor  # (B, N, d): cell vectors only (pre-encoder)
    xtu_mask: np.ndarray  # (B, N)
    gates: Tensor  # (C, 1) per-cell dtype gate
    alphas: Tensor  # (C, 1) per-cell link weight
    cell_slots: list[list[tuple[int, int]]]  # per row: (start, width) in xtu
    n_positions: int


def _pad_token_matrix(seqs: list[tuple[int, ...]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), width), dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=np.float64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def featurize_rows(rows: list[list[CellTokens]], params: ParamSet) -> PackedRows:
    """Run the TabUnit over every cell of a batch of rows in one pass."""
    if not rows or any(not r for r in rows):
        raise FeaturizeError("every row needs at least one cell")
    cells = [c for row in rows for c in row]
    name_ids, name_mask = _pad_token_matrix([c.name_ids for c in cells])
    val_ids, val_mask = _pad_token_matrix([c.value_ids for c in cells])
    dtype_ids = np.array([c.dtype_id for c in cells], dtype=np.int64)

    word, pos = params["emb.word"], params["emb.pos"]
    names = T.add(T.embedding(word, name_ids), T.embedding(pos, np.arange(name_ids.shape[1])))
    x_cn = T.mean_pool(names, name_mask)  # (C, d)
    x_dt = T.embedding(params["emb.dtype"], dtype_ids)  # (C, d)

    fuse_h = T.relu(T.add(T.matmul(x_dt, params["fuse.w"]), params["fuse.b"]))
    g = T.sigmoid(T.tsum(T.mul(fuse_h, params["fuse.v"]), axis=-1, keepdims=True))
    one_minus_g = T.add_const(T.scale(g, -1.0), 1.0)
    v_cn = T.add(T.mul(one_minus_g, x_cn), T.mul(g, x_dt))  # (C, d)

    values = T.add(T.embedding(word, val_ids), T.embedding(pos, np.arange(val_ids.shape[1])))
    link_h = T.relu(T.add(T.matmul(v_cn, params["link.w"]), params["link.b"]))
    alpha = T.sigmoid(T.tsum(T.mul(link_h, params["link.v"]), axis=-1, keepdims=True))
    v_cv = T.add(values, T.mul(T.reshape(alpha, (-1, 1, 1)), T.reshape(v_cn, (alpha.shape[0], 1, -1))))

    # cell block = [v_cn, v_cv...], flattened; gather valid slots in row order
    block = T.concat([T.reshape(v_cn, (v_cn.shape[0], 1, -1)), v_cv], axis=1)  # (C, 1+Lv, d)
    block_width = block.shape[1]
    flat = T.reshape(block, (-1, block.shape[2]))

    gather_idx: list[int] = []
    row_idx: list[int] = []
    col_idx: list[int] = []
    cell_slots: list[list[tuple[int, int]]] = []
    cell_no = 0
    n_max = 0
    for b, row in enumerate(rows):
        offset = 0
        slots = []
        for cell in row:
            width = cell.width()
            base = cell_no * block_width
            gather_idx.extend(range(base, base + width))
            row_idx.extend([b] * width)
            col_idx.extend(range(offset, offset + width))
            slots.append((offset, width))
            offset += width
            cell_no += 1
        cell_slots.append(slots)
        n_max = max(n_max, offset)

    picked = T.take_rows(flat, np.asarray(gather_idx, dtype=np.int64))
    xtu = T.scatter_rows(
        picked,
        np.asarray(row_idx, dtype=np.int64),
        np.asarray(col_idx, dtype=np.int64),
        (len(rows), n_max, block.shape[2]),
    )
    xtu_mask = np.zeros((len(rows), n_max), dtype=np.float64)
    xtu_mask[row_idx, col_idx] = 1.0

    cls = T.broadcast_to(T.reshape(params["cls"], (1, 1, -1)), (len(rows), 1, block.shape[2]))
    seq = T.concat([cls, xtu], axis=1)
    seq_mask = np.concatenate([np.ones((len(rows), 1)), xtu_mask], axis=1)
    return PackedRows(seq, seq_mask, xtu, xtu_mask, g, alpha, cell_slots, n_max + 1)
