"""Cross-modal dense retrieval: scoring, in-batch contrastive training, filtering."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .datagen import CaptionedPair
from .encoder import EncoderConfig, MultiModalEncoder, series_inputs
from .errors import ContractError, ParameterError
from .nn import Module
from .optim import AdamW
from .rng import child_rng
from .tensor import Tensor, no_grad
from .textrep import CLS, Vocabulary

log = logging.getLogger(__name__)


class DenoiserModel(Module):
    """Series path (encoder, vector output) and caption path share one encoder.

    The caption path reuses the token embedding, positions and transformer
    blocks of the series path, so an update to either path moves both.
    """

    kind = "denoiser"

    def __init__(self, vocab: Vocabulary, config: EncoderConfig, ae):
        self.vocab = vocab
        self._ae = ae
        self.encoder = MultiModalEncoder(config)

    @property
    def ae(self):
        return self._ae

    @property
    def config(self) -> EncoderConfig:
        return self.encoder.config

    def caption_ids(self, caption: str) -> list[int]:
        if not caption.strip():
            raise ParameterError("caption must be non-empty")
        return self.vocab.tokenize(f"{CLS} {caption}")

    def series_vectors(self, series_batch) -> Tensor:
        tokens, ts_emb = series_inputs(series_batch, self.vocab, self.ae, self.config.variant)
        return self.encoder.encode_batch(tokens, ts_emb).states[:, 0, :]

    def caption_vectors(self, captions: Sequence[str]) -> Tensor:
        return self.encoder.encode_caption_batch([self.caption_ids(c) for c in captions])

    def encode_caption(self, caption: str) -> np.ndarray:
        with no_grad():
            return self.caption_vectors([caption]).data[0]

    def encode_series(self, series) -> np.ndarray:
        with no_grad():
            return self.series_vectors([series]).data[0]

    def similarity(self, series, caption: str) -> float:
        """Dot product of the pooled series and caption vectors."""
        return float(np.dot(self.encode_series(series), self.encode_caption(caption)))

    def similarity_matrix(self, series_batch, captions) -> Tensor:
        xs = self.series_vectors(series_batch)
        return T.matmul(xs, T.transpose(self.caption_vectors(captions), (1, 0)))

    def score_batch(self, series_batch, captions, chunk: int = 64) -> np.ndarray:
        out = []
        with no_grad():
            for i in range(0, len(captions), chunk):
                xs = self.series_vectors(series_batch[i : i + chunk]).data
                cs = self.caption_vectors(captions[i : i + chunk]).data
                out.append((xs * cs).sum(axis=1))
        return np.concatenate(out) if out else np.zeros(0)


def in_batch_loss(sim: Tensor) -> Tensor:
    """Mean over rows of -log softmax(row)[diagonal] for a (B, B) similarity matrix."""
    b = sim.shape[0]
    return T.cross_entropy(sim, np.arange(b), pad_id=None)


def retrieval_accuracy(sim: np.ndarray, equivalent: np.ndarray | None = None) -> float:
    """Fraction of rows whose top caption is the diagonal one.

    ``equivalent[i, j]`` marks caption j as a correct answer for row i as
    well (same meaning as the diagonal caption); identical strings always are.
    """
    top = sim.argmax(axis=1)
    rows = np.arange(sim.shape[0])
    if equivalent is None:
        return float((top == rows).mean())
    return float(equivalent[rows, top].mean())


@dataclass
class DenoiserTrainLog:
    losses: list
    duplicate_batches: int = 0


def train_denoiser(
    pairs: Sequence[CaptionedPair],
    vocab: Vocabulary,
    ae,
    config: EncoderConfig | None = None,
    batch: int = 8,
    epochs: int = 10,
    seed: int = 0,
    lr: float = 1e-4,
    warmup_ratio: float = 0.33,
    weight_decay: float = 0.01,
    on_epoch=None,
    dropout: float = 0.1,
) -> tuple[DenoiserModel, DenoiserTrainLog]:
    """Contrastive training with in-batch negatives on groundtruth pairs only."""
    if len(pairs) < batch:
        raise ParameterError(f"need at least B={batch} pairs, got {len(pairs)}")
    config = config or EncoderConfig(vocab_size=len(vocab), d=ae.d, f=ae.f, seed=seed)
    model = DenoiserModel(vocab, config, ae)
    n_batches = len(pairs) // batch
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay, total_steps=epochs * n_batches, warmup_ratio=warmup_ratio)
    history = DenoiserTrainLog([])
    for epoch in range(epochs):
        order = child_rng(seed, "denoiser-shuffle", epoch).permutation(len(pairs))
        total = 0.0
        for bi in range(n_batches):
            items = [pairs[i] for i in order[bi * batch : (bi + 1) * batch]]
            captions = [p.caption for p in items]
            if len(set(captions)) < len(captions):
                history.duplicate_batches += 1
                log.debug("batch %d/%d holds duplicate captions (false negatives)", epoch, bi)
            series = [p.series for p in items]
            opt.zero_grad()
            with T.dropout_scope(dropout, child_rng(seed, "denoiser-dropout", epoch, bi)):
                loss = in_batch_loss(model.similarity_matrix(series, captions))
            loss.backward()
            opt.step()
            total += loss.item()
        history.losses.append(total / n_batches)
        log.info("denoiser epoch %d loss %.4f", epoch, history.losses[-1])
        if on_epoch is not None:
            on_epoch(epoch, model)
    if history.duplicate_batches:
        log.info("%d batches contained duplicate captions", history.duplicate_batches)
    return model, history


def score_pairs(pairs: Sequence[CaptionedPair], model: DenoiserModel) -> list[CaptionedPair]:
    scores = model.score_batch([p.series for p in pairs], [p.caption for p in pairs])
    return [replace(p, score=float(s)) for p, s in zip(pairs, scores)]


@dataclass(frozen=True)
class ScoreStats:
    count: int
    mean: float
    std: float
    min: float
    max: float

    @property
    def suggested_interval(self) -> tuple[float, float]:
        return (self.mean - 2 * self.std, self.mean - self.std)

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "std": self.std, "min": self.min, "max": self.max, "suggested_interval": list(self.suggested_interval)}


def score_stats(scores) -> ScoreStats:
    arr = np.asarray(list(scores), dtype=float)
    if arr.size < 2:
        raise ParameterError("score statistics need at least 2 scores")
    return ScoreStats(int(arr.size), float(arr.mean()), float(arr.std(ddof=1)), float(arr.min()), float(arr.max()))


def filter_pairs(pairs: Sequence[CaptionedPair], threshold: float = 0.0):
    """Keep pairs scoring >= threshold. Returns (kept, removed, stats)."""
    if any(p.score is None for p in pairs):
        raise ContractError("every pair must be scored before filtering")
    kept = [p for p in pairs if p.score >= threshold]
    removed = [p for p in pairs if p.score < threshold]
    return kept, removed, score_stats([p.score for p in pairs])


def denoise_report(kept, removed, stats: ScoreStats, threshold: float) -> dict:
    return {
        "count": stats.count,
        "kept": len(kept),
        "removed": len(removed),
        "mean": stats.mean,
        "std": stats.std,
        "threshold": threshold,
        "suggested_interval": list(stats.suggested_interval),
    }


def roc_auc(scores, positives) -> float:
    """Probability a random positive outranks a random negative (ties count half)."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    pos, neg = scores[positives], scores[~positives]
    if not len(pos) or not len(neg):
        raise ParameterError("ROC AUC needs both classes")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (len(pos) * len(neg)))
