import numpy as np
import pytest

from tabrep import tensor as T
from tabrep.model import EncoderConfig, Model, build_params
from tabrep.table import DataType, table_from_rows
from tabrep.tabunit import (
    CellTokens,
    EmptySeqError,
    embed_name,
    embed_values,
    featurize_rows,
    fuse_dtype,
    link_values,
    tab_unit,
    tokenize_row,
)
from tabrep.tensor import Rng, precision
from tabrep.vocab import MASK, build_vocab


@pytest.fixture()
def setup():
    t = table_from_rows(
        ["age", "credit amount", "purpose", "risk"],
        [["25", "1500.5", "radio tv", "good"], ["61", "800", None, "bad"]],
    )
    vocab = build_vocab([t])
    params = build_params(EncoderConfig.from_preset("tiny"), len(vocab), Rng(9))
    return t, vocab, params


class TestSingleCell:
    def test_one_token_name_is_word_plus_pos0(self, setup):
        _, vocab, params = setup
        tid = vocab.id_of("age")
        got = embed_name([tid], params).data
        expected = params["emb.word"].data[tid] + params["emb.pos"].data[0]
        np.testing.assert_allclose(got, expected, rtol=1e-6)

    def test_name_order_invariant_when_positions_zeroed(self, setup):
        _, vocab, params = setup
        params["emb.pos"].data[:] = 0
        a = embed_name([vocab.id_of("credit"), vocab.id_of("amount")], params).data
        b = embed_name([vocab.id_of("amount"), vocab.id_of("credit")], params).data
        np.testing.assert_allclose(a, b, atol=1e-7)

    def test_empty_name_rejected(self, setup):
        _, _, params = setup
        with pytest.raises(EmptySeqError):
            embed_name([], params)

    def test_zeroed_fuse_weights_average(self, setup):
        _, vocab, params = setup
        for name in ("fuse.w", "fuse.b", "fuse.v"):
            params[name].data[:] = 0
        x_cn = embed_name([vocab.id_of("age")], params)
        v_cn, g = fuse_dtype(x_cn, DataType.NUMERICAL, params)
        assert g.item() == pytest.approx(0.5)
        expected = 0.5 * (x_cn.data + params["emb.dtype"].data[0])
        np.testing.assert_allclose(v_cn.data, expected, rtol=1e-5)

    def test_zeroed_link_weights_half_injection(self, setup):
        _, vocab, params = setup
        for name in ("link.w", "link.b", "link.v"):
            params[name].data[:] = 0
        x_cn = embed_name([vocab.id_of("age")], params)
        v_cn, _ = fuse_dtype(x_cn, DataType.NUMERICAL, params)
        values = embed_values([vocab.id_of("2"), vocab.id_of("5")], params)
        v_cv, alpha = link_values(v_cn, values, params)
        assert alpha.item() == pytest.approx(0.5)
        np.testing.assert_allclose(v_cv.data, values.data + 0.5 * v_cn.data, rtol=1e-5)

    def test_fragment_width_is_one_plus_q(self, setup):
        _, vocab, params = setup
        cell = CellTokens(2, (vocab.id_of("purpose"),), tuple([vocab.id_of("radio")] * 3))
        out, _, _ = tab_unit(cell, params)
        assert out.shape == (4, 64)

    def test_masked_cell_gives_two_vectors(self, setup):
        _, vocab, params = setup
        cell = CellTokens(2, (vocab.id_of("purpose"),), (MASK,))
        out, _, _ = tab_unit(cell, params)
        assert out.shape == (2, 64)

    def test_scalar_recomputation_oracle(self, setup):
        """Independent numpy recomputation of the fuse and link equations."""
        _, vocab, params = setup
        with precision(np.float64):
            params64 = build_params(EncoderConfig.from_preset("tiny"), len(vocab), Rng(9))
            name_ids = [vocab.id_of("credit"), vocab.id_of("amount")]
            value_ids = [vocab.id_of("8"), vocab.id_of("0"), vocab.id_of("0")]
            cell = CellTokens(0, tuple(name_ids), tuple(value_ids))
            out, g, alpha = tab_unit(cell, params64)

            W = params64["emb.word"].data
            P = params64["emb.pos"].data
            x_cn = np.mean([W[i] + P[k] for k, i in enumerate(name_ids)], axis=0)
            x_dt = params64["emb.dtype"].data[0]
            pre = np.maximum(x_dt @ params64["fuse.w"].data + params64["fuse.b"].data, 0)
            g_ref = 1 / (1 + np.exp(-(pre @ params64["fuse.v"].data)))
            v_cn = (1 - g_ref) * x_cn + g_ref * x_dt
            pre = np.maximum(v_cn @ params64["link.w"].data + params64["link.b"].data, 0)
            a_ref = 1 / (1 + np.exp(-(pre @ params64["link.v"].data)))
            values = np.stack([W[i] + P[k] for k, i in enumerate(value_ids)])
            expected = np.concatenate([v_cn[None], values + a_ref * v_cn[None]], axis=0)

            assert g.item() == pytest.approx(g_ref, rel=1e-12)
            assert alpha.item() == pytest.approx(a_ref, rel=1e-12)
            np.testing.assert_allclose(out.data, expected, rtol=1e-10)


class TestBatchedFeaturizer:
    def test_matches_single_cell_path(self, setup):
        t, vocab, params = setup
        rows = [tokenize_row(t, 0, vocab), tokenize_row(t, 1, vocab)]
        packed = featurize_rows(rows, params)
        for b, row in enumerate(rows):
            for cell, (start, width) in zip(row, packed.cell_slots[b]):
                frag, _, _ = tab_unit(cell, params)
                got = packed.xtu.data[b, start : start + width]
                np.testing.assert_allclose(got, frag.data, atol=1e-6)

    def test_total_length_is_sum_of_cell_widths(self, setup):
        t, vocab, params = setup
        row = tokenize_row(t, 0, vocab)
        packed = featurize_rows([row], params)
        expected_n = sum(c.width() for c in row)
        assert int(packed.xtu_mask.sum()) == expected_n
        assert packed.seq.shape[1] == packed.xtu.shape[1] + 1

    def test_cell_independence(self, setup):
        t, vocab, params = setup
        row_a = tokenize_row(t, 0, vocab)
        row_b = list(row_a)
        row_b[2] = CellTokens(2, row_a[2].name_ids, (MASK,))  # edit one cell
        pa = featurize_rows([row_a], params)
        pb = featurize_rows([row_b], params)
        s, w = pa.cell_slots[0][0]
        np.testing.assert_array_equal(pa.xtu.data[0, s : s + w], pb.xtu.data[0, s : s + w])
        s, w = pa.cell_slots[0][1]
        np.testing.assert_array_equal(pa.xtu.data[0, s : s + w], pb.xtu.data[0, s : s + w])

    def test_same_dtype_same_gate_exactly(self, setup):
        t, vocab, params = setup
        rows = [tokenize_row(t, 0, vocab)]
        packed = featurize_rows(rows, params)
        gates = packed.gates.data.reshape(-1)
        dtypes = [c.dtype_id for c in rows[0]]
        for i, di in enumerate(dtypes):
            for j, dj in enumerate(dtypes):
                if di == dj:
                    assert gates[i] == gates[j]

    def test_gates_strictly_inside_unit_interval(self, setup):
        _, vocab, params = setup
        rng = np.random.default_rng(0)
        rows = []
        for _ in range(64):
            cells = []
            for _ in range(5):
                dtype = int(rng.integers(0, 3))
                name = tuple(int(i) for i in rng.integers(6, len(vocab), size=2))
                value = tuple(int(i) for i in rng.integers(6, len(vocab), size=3))
                cells.append(CellTokens(dtype, name, value))
            rows.append(cells)
        packed = featurize_rows(rows, params)
        for arr in (packed.gates.data, packed.alphas.data):
            assert (arr > 0).all() and (arr < 1).all()

    def test_alpha_constant_across_value_positions(self, setup):
        """One scalar alpha per cell reproduces every value position exactly."""
        t, vocab, params = setup
        row = tokenize_row(t, 0, vocab)
        packed = featurize_rows([row], params)
        assert packed.alphas.shape == (len(row), 1)
        cell_index = 2
        alpha = packed.alphas.data[cell_index, 0]
        values = embed_values(row[cell_index].value_ids, params).data
        start, width = packed.cell_slots[0][cell_index]
        v_cn = packed.xtu.data[0, start]
        expected = values + alpha * v_cn[None, :]
        got = packed.xtu.data[0, start + 1 : start + width]
        np.testing.assert_array_equal(got, expected)
