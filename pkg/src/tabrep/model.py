"""Transformer encoder over packed cell vectors plus a prompt-conditioned
shallow LSTM decoder.

The encoder prepends a trainable [CLS] vector and runs standard post-LN
self-attention blocks (full bidirectional attention, padding masked).
The decoder's initial hidden state comes from scaled dot-product attention
of prompt embeddings over the pre-encoder cell vectors, pooled by a learned
scoring vector and mixed with the encoded [CLS] state. Output logits are
tied to the word-embedding matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .optim import ParamSet, init_embedding, init_linear, init_ones, init_zeros
from .tabunit import CellTokens, PackedRows, featurize_rows
from .tensor import Rng, Tensor, no_grad
from .vocab import BOS, EOS, Vocabulary

PRESETS: dict[str, tuple[int, int, int]] = {
    "tiny": (64, 2, 4),
    "base": (768, 12, 12),
    "large": (1024, 24, 16),
    "xlarge": (1024, 48, 16),
}


class ModelError(ValueError):
    pass


class EmptyInputError(ModelError):
    pass


class EmptyPromptError(ModelError):
    pass


class EmptyTargetError(ModelError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 64
    layers: int = 2
    heads: int = 4
    ffn: int = 256
    max_pos: int = 64
    dropout: float = 0.1
    prompt_attn_source: str = "tabunit"  # or "encoder"
    preset: str = "tiny"

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ModelError("width must divide evenly across heads")
        if self.layers < 1:
            raise ModelError("need at least one encoder layer")
        if self.prompt_attn_source not in ("tabunit", "encoder"):
            raise ModelError("prompt_attn_source must be 'tabunit' or 'encoder'")

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "EncoderConfig":
        if name not in PRESETS:
            raise ModelError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        d, layers, heads = PRESETS[name]
        cfg = cls(d=d, layers=layers, heads=heads, ffn=4 * d, preset=name)
        return replace(cfg, **overrides) if overrides else cfg

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "layers": self.layers,
            "heads": self.heads,
            "ffn": self.ffn,
            "max_pos": self.max_pos,
            "dropout": self.dropout,
            "prompt_attn_source": self.prompt_attn_source,
            "preset": self.preset,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return cls(**data)


def build_params(config: EncoderConfig, vocab_size: int, rng: Rng) -> ParamSet:
    """Allocate every trainable tensor; init is keyed per-tensor by name so
    construction order never affects values."""
    d, ffn = config.d, config.ffn
    params = ParamSet()

    def emb(name, shape):
        params.register(name, init_embedding(rng.child("init", name), shape))

    def lin(name, shape):
        params.register(name, init_linear(rng.child("init", name), shape))

    def zeros(name, shape):
        params.register(name, init_zeros(shape))

    def ones(name, shape):
        params.register(name, init_ones(shape))

    emb("emb.word", (vocab_size, d))
    emb("emb.pos", (config.max_pos, d))
    emb("emb.dtype", (3, d))
    emb("cls", (d,))
    lin("fuse.w", (d, d))
    zeros("fuse.b", (d,))
    lin("fuse.v", (d,))
    lin("link.w", (d, d))
    zeros("link.b", (d,))
    lin("link.v", (d,))
    for i in range(config.layers):
        for proj in ("q", "k", "v", "o"):
            lin(f"enc.{i}.attn.w{proj}", (d, d))
            zeros(f"enc.{i}.attn.b{proj}", (d,))
        ones(f"enc.{i}.ln1.g", (d,))
        zeros(f"enc.{i}.ln1.b", (d,))
        lin(f"enc.{i}.ffn.w1", (d, ffn))
        zeros(f"enc.{i}.ffn.b1", (ffn,))
        lin(f"enc.{i}.ffn.w2", (ffn, d))
        zeros(f"enc.{i}.ffn.b2", (d,))
        ones(f"enc.{i}.ln2.g", (d,))
        zeros(f"enc.{i}.ln2.b", (d,))
    lin("dec.w1", (d, d))
    lin("dec.w2", (d, d))
    lin("dec.v1", (d, 1))
    lin("dec.ws", (2 * d, d))
    zeros("dec.bs", (d,))
    lin("lstm.wih", (d, 4 * d))
    lin("lstm.whh", (d, 4 * d))
    zeros("lstm.bih", (4 * d,))
    zeros("lstm.bhh", (4 * d,))
    return params


def count_parameters(config: EncoderConfig, vocab_size: int) -> int:
    """Closed-form parameter count; must equal the ParamSet total."""
    d, ffn, layers = config.d, config.ffn, config.layers
    total = (vocab_size + config.max_pos + 3) * d + d  # embeddings + cls
    total += 2 * (d * d + 2 * d)  # fuse + link (w, b, v)
    per_layer = 4 * (d * d + d) + 2 * (2 * d) + (d * ffn + ffn) + (ffn * d + d)
    total += layers * per_layer
    total += d * d + d * d + d + 2 * d * d + d  # decoder init: w1, w2, v1, ws, bs
    total += 2 * (d * 4 * d) + 2 * (4 * d)  # lstm
    return total


@dataclass
class EncodedRows:
    """Encoder output plus the retained pre-encoder cell vectors."""

    hidden: Tensor  # (B, 1+N, d)
    packed: PackedRows

    def h_cls(self) -> Tensor:
        b = self.hidden.shape[0]
        return T.reshape(T.slice_axis(self.hidden, 1, 0, 1), (b, -1))


class Model:
    """Bundles config, vocabulary, and parameters with forward methods."""

    def __init__(
        self,
        config: EncoderConfig,
        vocab: Vocabulary,
        rng: Rng | None = None,
        params: ParamSet | None = None,
    ):
        self.config = config
        self.vocab = vocab
        self.params = params if params is not None else build_params(config, len(vocab), rng or Rng(0))

    # -- encoding -----------------------------------------------------------

    def featurize(self, rows: list[list[CellTokens]]) -> PackedRows:
        return featurize_rows(rows, self.params)

    def encode(
        self, packed: PackedRows, training: bool = False, rng: Rng | None = None
    ) -> EncodedRows:
        cfg, params = self.config, self.params
        x = packed.seq
        if x.shape[1] < 2:
            raise EmptyInputError("nothing to encode besides [CLS]")
        b, t, d = x.shape
        heads, dh = cfg.heads, cfg.d // cfg.heads
        key_bias = (1.0 - packed.seq_mask)[:, None, None, :] * T.neg_inf()
        for i in range(cfg.layers):
            pre = f"enc.{i}"

            def proj(name, inp):
                return T.add(T.matmul(inp, params[f"{pre}.attn.w{name}"]), params[f"{pre}.attn.b{name}"])

            def to_heads(z):
                return T.transpose(T.reshape(z, (b, t, heads, dh)), (0, 2, 1, 3))

            q, k, v = to_heads(proj("q", x)), to_heads(proj("k", x)), to_heads(proj("v", x))
            scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(dh))
            probs = T.softmax(T.add_const(scores, key_bias), axis=-1)
            probs = T.dropout(probs, cfg.dropout, rng, training)
            ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (b, t, d))
            attn_out = T.add(T.matmul(ctx, params[f"{pre}.attn.wo"]), params[f"{pre}.attn.bo"])
            x = T.layer_norm(
                T.add(x, T.dropout(attn_out, cfg.dropout, rng, training)),
                params[f"{pre}.ln1.g"],
                params[f"{pre}.ln1.b"],
            )
            h = T.gelu(T.add(T.matmul(x, params[f"{pre}.ffn.w1"]), params[f"{pre}.ffn.b1"]))
            h = T.add(T.matmul(h, params[f"{pre}.ffn.w2"]), params[f"{pre}.ffn.b2"])
            x = T.layer_norm(
                T.add(x, T.dropout(h, cfg.dropout, rng, training)),
                params[f"{pre}.ln2.g"],
                params[f"{pre}.ln2.b"],
            )
        return EncodedRows(x, packed)

    # -- decoder ------------------------------------------------------------

    def decoder_init(
        self, encoded: EncodedRows, prompt_ids: np.ndarray, prompt_mask: np.ndarray
    ) -> Tensor:
        """Prompt attention over cell vectors -> pooled state (B, d)."""
        params, cfg = self.params, self.config
        prompt_ids = np.asarray(prompt_ids, dtype=np.int64)
        if prompt_ids.ndim != 2 or prompt_ids.shape[1] == 0:
            raise EmptyPromptError("prompt must be (B, Q>=1) token ids")
        b, q_len = prompt_ids.shape
        emb = T.add(
            T.embedding(params["emb.word"], prompt_ids),
            T.embedding(params["emb.pos"], np.arange(q_len)),
        )
        queries = T.matmul(emb, params["dec.w1"])  # (B, Q, d)
        if cfg.prompt_attn_source == "tabunit":
            source, source_mask = encoded.packed.xtu, encoded.packed.xtu_mask
        else:
            n = encoded.hidden.shape[1]
            source = T.slice_axis(encoded.hidden, 1, 1, n)
            source_mask = encoded.packed.xtu_mask
        kv = T.matmul(source, params["dec.w2"])  # (B, N, d)
        scores = T.scale(T.matmul(queries, T.transpose(kv)), 1.0 / np.sqrt(cfg.d))
        scores = T.add_const(scores, (1.0 - source_mask)[:, None, :] * T.neg_inf())
        y = T.matmul(T.softmax(scores, axis=-1), kv)  # (B, Q, d)
        s = T.reshape(T.matmul(y, params["dec.v1"]), (b, q_len))
        s = T.add_const(s, (1.0 - prompt_mask) * T.neg_inf())
        weights = T.softmax(s, axis=-1)
        v_p = T.tsum(T.mul(y, T.reshape(weights, (b, q_len, 1))), axis=1)
        mixed = T.concat([v_p, encoded.h_cls()], axis=-1)
        return T.add(T.matmul(mixed, params["dec.ws"]), params["dec.bs"])

    def _lstm_step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        params, d = self.params, self.config.d
        z = T.add(
            T.add(T.matmul(x, params["lstm.wih"]), params["lstm.bih"]),
            T.add(T.matmul(h, params["lstm.whh"]), params["lstm.bhh"]),
        )
        i = T.sigmoid(T.slice_axis(z, -1, 0, d))
        f = T.sigmoid(T.slice_axis(z, -1, d, 2 * d))
        g = T.tanh(T.slice_axis(z, -1, 2 * d, 3 * d))
        o = T.sigmoid(T.slice_axis(z, -1, 3 * d, 4 * d))
        c_new = T.add(T.mul(f, c), T.mul(i, g))
        return T.mul(o, T.tanh(c_new)), c_new

    def _step_logits(self, h: Tensor) -> Tensor:
        return T.matmul(h, T.transpose(self.params["emb.word"], (1, 0)))

    def _decoder_input(self, token_ids: np.ndarray, step: int) -> Tensor:
        word = T.embedding(self.params["emb.word"], token_ids)
        pos = T.embedding(self.params["emb.pos"], np.asarray(min(step, self.config.max_pos - 1)))
        return T.add(word, pos)

    def decode_train(
        self, state: Tensor, target_ids: np.ndarray, target_mask: np.ndarray
    ) -> Tensor:
        """Teacher-forced per-sequence mean token cross-entropy, shape (B,).

        Targets must end with [EOS] inside the masked region; inputs are the
        targets shifted right behind [BOS].
        """
        target_ids = np.asarray(target_ids, dtype=np.int64)
        if target_ids.ndim != 2 or target_ids.shape[1] == 0:
            raise EmptyTargetError("target must be (B, T>=1) token ids")
        b, t_len = target_ids.shape
        inputs = np.concatenate(
            [np.full((b, 1), BOS, dtype=np.int64), target_ids[:, :-1]], axis=1
        )
        h = state
        c = Tensor(np.zeros_like(state.data))
        total = None
        for t in range(t_len):
            x = self._decoder_input(inputs[:, t], t)
            h, c = self._lstm_step(x, h, c)
            ce = T.cross_entropy(self._step_logits(h), target_ids[:, t])
            ce = T.mul_const(ce, target_mask[:, t])
            total = ce if total is None else T.add(total, ce)
        counts = np.maximum(target_mask.sum(axis=1), 1.0)
        return T.mul_const(total, 1.0 / counts)

    def sequence_logprob(self, state: Tensor, seq: list[int]) -> Tensor:
        """Summed log-probability of emitting seq then [EOS], shape (B,)."""
        b = state.shape[0]
        ids = np.tile(np.asarray(list(seq) + [EOS], dtype=np.int64), (b, 1))
        mask = np.ones(ids.shape, dtype=np.float64)
        mean_ce = self.decode_train(state, ids, mask)
        return T.scale(mean_ce, -float(ids.shape[1]))

    def label_probs(self, state: Tensor, label_seqs: list[list[int]]) -> np.ndarray:
        """Normalize per-label sequence log-likelihoods into probabilities."""
        if len(label_seqs) < 2:
            raise ModelError("label scoring needs at least two labels")
        with no_grad():
            lls = [self.sequence_logprob(state, seq).data for seq in label_seqs]
        stacked = np.stack(lls, axis=1).astype(np.float64)  # (B, K)
        shifted = stacked - stacked.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def generate(
        self,
        state: Tensor,
        max_len: int = 32,
        grammar=None,
    ) -> list[list[int]]:
        """Greedy decoding until [EOS] or max_len; `grammar` optionally
        restricts candidate tokens per step (see tasks.NumericGrammar)."""
        if max_len < 1:
            raise ModelError("max_len must be >= 1")
        with no_grad():
            b = state.shape[0]
            v = len(self.vocab)
            h, c = state, Tensor(np.zeros_like(state.data))
            tokens = np.full((b,), BOS, dtype=np.int64)
            done = np.zeros(b, dtype=bool)
            states = [grammar.start() for _ in range(b)] if grammar is not None else None
            out: list[list[int]] = [[] for _ in range(b)]
            for step in range(max_len):
                x = self._decoder_input(tokens, step)
                h, c = self._lstm_step(x, h, c)
                logits = self._step_logits(h).data.copy()
                if grammar is not None:
                    remaining = max_len - step
                    for i in range(b):
                        if done[i]:
                            continue
                        allowed = grammar.allowed(states[i], remaining)
                        bias = np.full(v, -np.inf)
                        bias[list(allowed)] = 0.0
                        logits[i] += bias
                picks = logits.argmax(axis=1)
                for i in range(b):
                    if done[i]:
                        continue
                    tok = int(picks[i])
                    if tok == EOS:
                        done[i] = True
                        continue
                    out[i].append(tok)
                    if states is not None:
                        states[i] = grammar.advance(states[i], tok)
                tokens = np.where(done, EOS, picks).astype(np.int64)
                if done.all():
                    break
            return out

    def pick_constrained(self, state: Tensor, allowed_seqs: list[list[int]]) -> list[int]:
        """Index of the highest summed-log-probability sequence per row;
        exact ties resolve to the lowest sequence index."""
        if not allowed_seqs:
            raise ModelError("constrained generation needs a non-empty allowed set")
        with no_grad():
            lls = np.stack(
                [self.sequence_logprob(state, seq).data for seq in allowed_seqs], axis=1
            )
        return [int(i) for i in lls.argmax(axis=1)]
