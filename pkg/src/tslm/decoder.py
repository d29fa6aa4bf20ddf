"""Caption decoder over the encoder matrix, teacher-forced training and sampling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .datagen import CaptionedPair
from .encoder import EncodedBatch, EncoderConfig, MultiModalEncoder, pad_batch, series_inputs
from .errors import ParameterError
from .nn import DecoderBlock, LayerNorm, Module, causal_mask, key_padding_mask
from .optim import AdamW
from .rng import child_rng
from .tensor import Tensor, no_grad
from .textrep import BOS_ID, EOS_ID, PAD_ID, Vocabulary

log = logging.getLogger(__name__)


@dataclass
class SamplingConfig:
    k: int = 3
    top_k: int = 50
    top_p: float = 0.95
    temperature: float = 0.95
    max_len: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.top_k < 1 or self.max_len < 1:
            raise ParameterError("k, top_k and max_len must be >= 1")
        if not 0.0 < self.top_p <= 1.0:
            raise ParameterError("top_p must lie in (0, 1]")
        if self.temperature < 0:
            raise ParameterError("temperature must be >= 0")


class TslmModel(Module):
    """Encoder (matrix variant) + causal decoder with an LM head tied to the token table."""

    kind = "tslm"

    def __init__(self, vocab: Vocabulary, config: EncoderConfig, ae, dec_layers: int = 2, max_len: int = 16):
        self.vocab = vocab
        self._ae = ae
        self.dec_layers = dec_layers
        self.max_len = max_len
        self.encoder = MultiModalEncoder(config)
        d = config.d
        self.dec_positions = Tensor(child_rng(config.seed, "dec.pos").normal(0.0, 0.02, size=(max_len + 2, d)), requires_grad=True)
        self.dec_blocks = [DecoderBlock(d, config.heads, config.seed, f"dec.block{i}") for i in range(dec_layers)]
        self.dec_norm = LayerNorm(d)

    @property
    def ae(self):
        return self._ae

    @property
    def config(self) -> EncoderConfig:
        return self.encoder.config

    @property
    def head_scale(self) -> float:
        return 1.0 / self.config.d

    def encode(self, series_batch) -> EncodedBatch:
        tokens, ts_emb = series_inputs(series_batch, self.vocab, self.ae, self.config.variant)
        return self.encoder.encode_batch(tokens, ts_emb)

    def logits(self, memory: EncodedBatch, dec_ids: np.ndarray) -> Tensor:
        """(B, t) decoder inputs -> (B, t, |V|) next-token logits."""
        dec_ids = np.asarray(dec_ids, dtype=np.int64)
        width = dec_ids.shape[1]
        if width > self.dec_positions.shape[0]:
            raise ParameterError("decoder input longer than max_len + 2")
        y = self.encoder.embed_tokens(dec_ids) + self.dec_positions[:width]
        self_mask = causal_mask(width) + key_padding_mask(dec_ids != PAD_ID)
        cross_mask = key_padding_mask(memory.valid)
        for block in self.dec_blocks:
            y = block(y, memory.states, self_mask, cross_mask)
        h = self.dec_norm(y)
        return T.matmul(h, T.transpose(self.encoder.embedding_table(), (1, 0))) * self.head_scale

    def caption_targets(self, captions: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """Teacher-forcing inputs ([BOS] c) and targets (c [EOS]), padded."""
        ins, outs = [], []
        for c in captions:
            ids = self.vocab.tokenize(c)
            if len(ids) > self.max_len:
                log.warning("caption truncated to %d tokens: %r", self.max_len, c)
                ids = ids[: self.max_len]
            ins.append([BOS_ID] + ids)
            outs.append(ids + [EOS_ID])
        return pad_batch(ins)[0], pad_batch(outs)[0]

    def loss(self, series_batch, captions) -> Tensor:
        memory = self.encode(series_batch)
        dec_in, targets = self.caption_targets(captions)
        return T.cross_entropy(self.logits(memory, dec_in), targets, pad_id=PAD_ID)

    def decode_logits(self, prefix: Sequence[int], x_matrix) -> np.ndarray:
        """Next-token logits after ``prefix`` given one encoder matrix (n+f, d)."""
        if len(prefix) == 0:
            raise ParameterError("prefix must start with [BOS]")
        if prefix[0] != BOS_ID:
            raise ParameterError("prefix must start with [BOS]")
        x = np.asarray(x_matrix.data if isinstance(x_matrix, Tensor) else x_matrix)
        memory = EncodedBatch(Tensor(x[None]), np.ones((1, x.shape[0]), bool), np.array([x.shape[0]]))
        with no_grad():
            return self.logits(memory, np.asarray([prefix]))[0, -1].data


def train_tslm(
    pairs: Sequence[CaptionedPair],
    vocab: Vocabulary,
    ae,
    config: EncoderConfig | None = None,
    epochs: int = 10,
    batch: int = 8,
    seed: int = 0,
    lr: float = 1e-4,
    warmup_ratio: float = 0.33,
    weight_decay: float = 0.01,
    dec_layers: int = 2,
    max_len: int = 16,
    target_loss: float | None = None,
) -> tuple[TslmModel, list[float]]:
    """Teacher-forced next-token training over a uniform shuffle of all pairs.

    Stops early once an epoch's mean loss falls below ``target_loss``.
    """
    if not pairs:
        raise ParameterError("no training pairs")
    config = config or EncoderConfig(vocab_size=len(vocab), d=ae.d, f=ae.f, seed=seed)
    model = TslmModel(vocab, config, ae, dec_layers, max_len)
    steps = epochs * math.ceil(len(pairs) / batch)
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay, total_steps=steps, warmup_ratio=warmup_ratio)
    history = []
    for epoch in range(epochs):
        order = child_rng(seed, "tslm-shuffle", epoch).permutation(len(pairs))
        total = 0.0
        for start in range(0, len(pairs), batch):
            items = [pairs[i] for i in order[start : start + batch]]
            opt.zero_grad()
            loss = model.loss([p.series for p in items], [p.caption for p in items])
            loss.backward()
            opt.step()
            total += loss.item() * len(items)
        history.append(total / len(pairs))
        log.info("tslm epoch %d loss %.4f", epoch, history[-1])
        if target_loss is not None and history[-1] < target_loss:
            break
    return model, history


# ----------------------------------------------------------------------
# sampling
# ----------------------------------------------------------------------
def truncate_distribution(probs, top_k: int, top_p: float) -> np.ndarray:
    """Zero every token outside (top_k most likely) AND (smallest prefix with mass >= top_p)."""
    probs = np.asarray(probs, dtype=np.float64)
    order = np.argsort(-probs, kind="stable")
    sorted_p = probs[order]
    cum = np.cumsum(sorted_p)
    # first index whose cumulative mass reaches top_p, tolerant to rounding
    cutoff = int(np.searchsorted(cum, top_p - 1e-12)) + 1
    keep = order[: min(top_k, cutoff, len(probs))]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def next_token(logits: np.ndarray, cfg: SamplingConfig, rng: np.random.Generator) -> int:
    if cfg.temperature <= 1e-6:
        return int(np.argmax(logits))
    z = logits.astype(np.float64) / cfg.temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    p = truncate_distribution(p, cfg.top_k, cfg.top_p)
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return min(idx, len(p) - 1) if p[min(idx, len(p) - 1)] > 0 else int(np.argmax(p))


def _decode_batch(model: TslmModel, memory: EncodedBatch, rows: np.ndarray, rngs, cfg: SamplingConfig) -> list[list[int]]:
    """Autoregressive sampling for memory rows ``rows``; one generator per sequence."""
    n = len(rows)
    mem = EncodedBatch(Tensor(memory.states.data[rows]), memory.valid[rows], memory.lengths[rows])
    seqs = np.full((n, 1), BOS_ID, dtype=np.int64)
    done = np.zeros(n, bool)
    out = [[] for _ in range(n)]
    limit = min(cfg.max_len, model.max_len) + 1
    with no_grad():
        for _ in range(limit):
            logits = model.logits(mem, seqs).data[:, -1]
            step = np.full(n, PAD_ID, dtype=np.int64)
            for i in range(n):
                if done[i]:
                    continue
                tok = next_token(logits[i], cfg, rngs[i])
                step[i] = tok
                if tok == EOS_ID:
                    done[i] = True
                else:
                    out[i].append(tok)
            if done.all():
                break
            # finished rows keep feeding PAD; their later logits are ignored
            seqs = np.concatenate([seqs, np.where(done, PAD_ID, step)[:, None]], axis=1)
    return out


def generate_many(model: TslmModel, series_batch, cfg: SamplingConfig, chunk: int = 32) -> list[list[str]]:
    """K captions for each series; caption j of series i uses child seed (seed, i, j)."""
    results = []
    for start in range(0, len(series_batch), chunk):
        part = series_batch[start : start + chunk]
        with no_grad():
            memory = model.encode(part)
        rows = np.repeat(np.arange(len(part)), cfg.k)
        rngs = [child_rng(cfg.seed, "sample", start + i, j) for i in range(len(part)) for j in range(cfg.k)]
        ids = _decode_batch(model, memory, rows, rngs, cfg)
        texts = [model.vocab.detokenize(s, skip_special=True) for s in ids]
        results.extend(texts[i * cfg.k : (i + 1) * cfg.k] for i in range(len(part)))
    return results


def generate_captions(series, model: TslmModel, cfg: SamplingConfig) -> list[str]:
    return generate_many(model, [series], cfg)[0]


def sample_caption(series, model: TslmModel, cfg: SamplingConfig) -> str:
    return generate_captions(series, model, replace(cfg, k=1))[0]


def greedy_caption(series, model: TslmModel, max_len: int = 16) -> str:
    return sample_caption(series, model, SamplingConfig(k=1, temperature=0.0, max_len=max_len))
