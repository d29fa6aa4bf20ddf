"""Multi-modal encoder: token embedding, text prototypes, reprogramming, transformer blocks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ParameterError, ShapeError
from .nn import EncoderBlock, LayerNorm, Module, key_padding_mask, split_heads, merge_heads, attention, uniform_param
from .rng import child_rng
from .tensor import Tensor, no_grad
from .textrep import NUMBER_OFFSET, NUMBER_TOKENS, PAD_ID, Vocabulary, assemble_joint_text

VARIANTS = ("joint", "text", "timeseries")


@dataclass
class EncoderConfig:
    vocab_size: int
    d: int = 128
    heads: int = 4
    prototypes: int = 64
    layers: int = 2
    f: int = 6
    max_positions: int = 128
    variant: str = "joint"
    seed: int = 0

    def __post_init__(self):
        if self.d % self.heads:
            raise ParameterError(f"d={self.d} must be divisible by heads={self.heads}")
        if not 0 < self.prototypes < self.vocab_size:
            raise ParameterError("need 0 < p < |V| text prototypes")
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant must be one of {VARIANTS}")

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class EncoderOutput:
    matrix: np.ndarray  # (n + f, d)

    @property
    def vector(self) -> np.ndarray:
        return self.matrix[0]


@dataclass
class EncodedBatch:
    states: Tensor  # (B, S, d)
    valid: np.ndarray  # (B, S) bool
    lengths: np.ndarray  # (B,) real rows per item


def pad_batch(seqs: Sequence[Sequence[int]], pad: int = PAD_ID) -> tuple[np.ndarray, np.ndarray]:
    n = max(len(s) for s in seqs)
    out = np.full((len(seqs), n), pad, dtype=np.int64)
    lengths = np.zeros(len(seqs), dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        lengths[i] = len(s)
    return out, lengths


NUMBER_FREQ = 0.05  # angle step per unit value for the fixed number-token rows


def sinusoid(positions, d: int) -> np.ndarray:
    """Sin/cos table, (len(positions), d), geometric frequencies with base 10000."""
    pos = np.asarray(positions, dtype=np.float64)
    i = np.arange(d // 2)
    angle = pos[:, None] / (10000.0 ** (2 * i / d))[None, :]
    table = np.zeros((len(pos), d))
    table[:, : d // 2] = np.sin(angle)
    table[:, d // 2 : 2 * (d // 2)] = np.cos(angle)
    return table


class MultiModalEncoder(Module):
    """Token embedding, text prototypes, reprogramming layer and encoder blocks.

    Number tokens "0".."100" use fixed sinusoidal rows of their value so that
    nearby values start (and stay) close; the rest of the table is learned.
    """

    def __init__(self, config: EncoderConfig):
        self.config = config
        c = config
        n_num = len(NUMBER_TOKENS)
        if c.vocab_size < NUMBER_OFFSET + n_num:
            raise ParameterError("vocabulary too small to hold the number tokens")
        table = child_rng(c.seed, "enc.embed").normal(0.0, 1.0, size=(c.vocab_size, c.d))
        learned = np.ones((c.vocab_size, 1))
        learned[NUMBER_OFFSET : NUMBER_OFFSET + n_num] = 0.0
        fixed = np.zeros((c.vocab_size, c.d))
        fixed[NUMBER_OFFSET : NUMBER_OFFSET + n_num] = sinusoid(np.arange(n_num) * NUMBER_FREQ, c.d)
        self.token_embedding = Tensor(table * learned, requires_grad=True)
        self._learned_rows = learned
        self._fixed_rows = fixed
        self.positions = Tensor(sinusoid(np.arange(c.max_positions), c.d), requires_grad=True)
        self.prototype_proj = uniform_param(child_rng(c.seed, "enc.proto"), (c.prototypes, c.vocab_size), c.vocab_size)
        self.reprogram_query = uniform_param(child_rng(c.seed, "enc.rq"), (c.d, c.d), c.d)
        self.reprogram_key = uniform_param(child_rng(c.seed, "enc.rk"), (c.d, c.d), c.d)
        self.reprogram_value = uniform_param(child_rng(c.seed, "enc.rv"), (c.d, c.d), c.d)
        self.blocks = [EncoderBlock(c.d, c.heads, c.seed, f"enc.block{i}") for i in range(c.layers)]
        self.final_norm = LayerNorm(c.d)

    def embedding_table(self) -> Tensor:
        """Full (|V|, d) table: learned rows plus the fixed number rows."""
        dtype = self.token_embedding.data.dtype
        return self.token_embedding * self._learned_rows.astype(dtype) + self._fixed_rows.astype(dtype)

    # -- pieces ---------------------------------------------------------
    def text_prototypes(self) -> Tensor:
        """E_p = P V: (p, d) learned mixtures of vocabulary rows."""
        return T.matmul(self.prototype_proj, self.embedding_table())

    def reprogram(self, ts_emb, probs_out: list | None = None) -> Tensor:
        """Cross-attention from (B, f, d) series embeddings onto the text prototypes.

        Heads use column blocks of the query/key/value matrices; no output
        projection, the per-head results are concatenated.
        """
        x = T.as_tensor(ts_emb)
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim != 3 or x.shape[2] != self.config.d:
            raise ShapeError(f"series embedding must be (f, {self.config.d}), got {x.shape[-2:]}")
        heads = self.config.heads
        protos = self.text_prototypes()
        q = split_heads(T.matmul(x, self.reprogram_query), heads)  # (B, H, f, dh)
        p = protos.shape[0]
        k = split_heads(T.reshape(T.matmul(protos, self.reprogram_key), (1, p, -1)), heads)  # (1, H, p, dh)
        v = split_heads(T.reshape(T.matmul(protos, self.reprogram_value), (1, p, -1)), heads)
        z = merge_heads(attention(q, k, v, None, probs_out))
        return T.reshape(z, z.shape[1:]) if squeeze else z

    def embed_tokens(self, ids) -> Tensor:
        return T.embedding(self.embedding_table(), ids)

    def embed_joint_text(self, ids: Sequence[int]) -> Tensor:
        """(n, d) token embeddings plus absolute positions 0..n-1."""
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) > self.config.max_positions:
            raise ShapeError("sequence longer than the positional table")
        return self.embed_tokens(ids) + self.positions[: len(ids)]

    def run_blocks(self, x: Tensor, valid: np.ndarray, probs_out: list | None = None) -> Tensor:
        mask = key_padding_mask(valid)
        for block in self.blocks:
            x = block(x, mask, probs_out)
        return self.final_norm(x)

    # -- full passes ----------------------------------------------------
    def encode_batch(self, token_seqs: Sequence[Sequence[int]], ts_emb=None, probs_out: list | None = None) -> EncodedBatch:
        """Row-concatenate text embeddings with reprogrammed series rows, then self-attend.

        ``ts_emb`` is (B, f, d) or None for the text-only variant. Series rows
        directly follow each item's own text rows; padding goes last.
        """
        ids, lengths = pad_batch(token_seqs)
        b, n_max = ids.shape
        text = self.embed_tokens(ids)
        if ts_emb is None:
            seq = text
            total = lengths.copy()
        else:
            z = self.reprogram(ts_emb, probs_out)
            f = z.shape[1]
            if z.shape[0] != b:
                raise ShapeError("batch size mismatch between tokens and series embeddings")
            both = T.concat([text, z], axis=1)
            s = np.arange(n_max + f)[None, :]
            n = lengths[:, None]
            index = np.where(s < n, s, np.where(s < n + f, n_max + s - n, np.minimum(n, n_max - 1)))
            seq = T.gather_rows(both, index)
            total = lengths + f
        width = seq.shape[1]
        if width > self.config.max_positions:
            raise ShapeError("sequence longer than the positional table")
        seq = seq + self.positions[:width]
        valid = np.arange(width)[None, :] < total[:, None]
        return EncodedBatch(self.run_blocks(seq, valid, probs_out), valid, total)

    def encode_caption_batch(self, token_seqs: Sequence[Sequence[int]]) -> Tensor:
        """[CLS]-prefixed caption ids -> (B, d) pooled [CLS] states."""
        ids, lengths = pad_batch(token_seqs)
        width = ids.shape[1]
        x = self.embed_tokens(ids) + self.positions[:width]
        valid = np.arange(width)[None, :] < lengths[:, None]
        return self.run_blocks(x, valid)[:, 0, :]


def series_inputs(series_batch, vocab: Vocabulary, ae, variant: str):
    """Token ids and frozen autoencoder embeddings for a batch of series."""
    tokens = [assemble_joint_text(s, vocab, variant) for s in series_batch]
    ts_emb = None if variant == "text" else Tensor(ae.encode_many(series_batch))
    return tokens, ts_emb


def encode_joint(series, encoder: MultiModalEncoder, vocab: Vocabulary, ae, variant: str | None = None) -> EncoderOutput:
    """Matrix output X for one series (vector variant = row 0)."""
    variant = variant or encoder.config.variant
    tokens, ts_emb = series_inputs([series], vocab, ae, variant)
    with no_grad():
        out = encoder.encode_batch(tokens, ts_emb)
    return EncoderOutput(out.states.data[0, : int(out.lengths[0])])
