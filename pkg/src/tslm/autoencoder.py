"""1-D convolutional autoencoder producing the frozen (f x d) series embedding."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import NumericError, ParameterError, ShapeError
from .nn import Linear, Module, uniform_param, zeros_param
from .optim import AdamW
from .rng import child_rng
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

KERNEL, STRIDE, PADDING = 3, 2, 1


def canonicalize(series: Sequence[float], l_max: int = 24) -> np.ndarray:
    """Scale into [0, 1] and linearly resample to ``l_max`` points."""
    values = np.asarray(series, dtype=np.float64)
    if values.size < 2:
        raise ParameterError("canonicalize needs at least 2 values")
    src = np.linspace(0.0, 1.0, values.size)
    dst = np.linspace(0.0, 1.0, l_max)
    return np.clip(np.interp(dst, src, values / 100.0), 0.0, 1.0)


@dataclass
class AutoencoderConfig:
    d: int = 128
    l_max: int = 24
    channels: tuple[int, int, int, int] = (32, 16, 16, 32)
    seed: int = 0

    @property
    def f(self) -> int:
        return self.l_max // 4

    def to_dict(self) -> dict:
        return {"d": self.d, "l_max": self.l_max, "channels": list(self.channels), "seed": self.seed}

    @classmethod
    def from_dict(cls, cfg: dict) -> "AutoencoderConfig":
        return cls(int(cfg["d"]), int(cfg["l_max"]), tuple(int(c) for c in cfg["channels"]), int(cfg.get("seed", 0)))


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, seed: int, name: str):
        self.weight = uniform_param(child_rng(seed, name), (c_out, c_in, KERNEL), c_in * KERNEL)
        self.bias = zeros_param((c_out, 1))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, STRIDE, PADDING) + self.bias


class ConvTranspose1d(Module):
    def __init__(self, c_in: int, c_out: int, seed: int, name: str):
        self.weight = uniform_param(child_rng(seed, name), (c_in, c_out, KERNEL), c_in * KERNEL)
        self.bias = zeros_param((c_out, 1))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d_transpose(x, self.weight, STRIDE, PADDING, output_padding=1) + self.bias


class Autoencoder(Module):
    """Encoder: conv(1->c1) -> conv(c1->c2) -> per-position map c2->d.

    Decoder: per-position map d->c3 -> transpose conv(c3->c4) -> transpose conv(c4->1).
    """

    kind = "autoencoder"

    def __init__(self, config: AutoencoderConfig | None = None):
        self.config = config or AutoencoderConfig()
        c = self.config
        if c.l_max % 4:
            raise ParameterError("l_max must be divisible by 4")
        c1, c2, c3, c4 = c.channels
        s = c.seed
        self.enc1 = Conv1d(1, c1, s, "ae.enc1")
        self.enc2 = Conv1d(c1, c2, s, "ae.enc2")
        self.enc_map = Linear(c2, c.d, s, "ae.enc_map")
        self.dec_map = Linear(c.d, c3, s, "ae.dec_map")
        self.dec1 = ConvTranspose1d(c3, c4, s, "ae.dec1")
        self.dec2 = ConvTranspose1d(c4, 1, s, "ae.dec2")

    @property
    def f(self) -> int:
        return self.config.f

    @property
    def d(self) -> int:
        return self.config.d

    def encode_batch(self, x: Tensor) -> Tensor:
        """(B, L_max) canonical inputs -> (B, f, d)."""
        h = T.reshape(x, (x.shape[0], 1, x.shape[1]))
        h = T.relu(self.enc1(h))
        h = T.relu(self.enc2(h))
        return self.enc_map(T.transpose(h, (0, 2, 1)))

    def decode_batch(self, z: Tensor) -> Tensor:
        """(B, f, d) -> (B, L_max) in (0, 1)."""
        if z.ndim != 3 or z.shape[1:] != (self.f, self.d):
            raise ShapeError(f"expected (B, {self.f}, {self.d}) embeddings, got {z.shape}")
        h = T.transpose(self.dec_map(z), (0, 2, 1))
        h = T.relu(self.dec1(h))
        h = T.sigmoid(self.dec2(h))
        return T.reshape(h, (h.shape[0], h.shape[2]))

    def encode(self, series: Sequence[float]) -> np.ndarray:
        return self.encode_many([series])[0]

    def encode_many(self, batch: Sequence[Sequence[float]]) -> np.ndarray:
        x = np.stack([canonicalize(s, self.config.l_max) for s in batch])
        with no_grad():
            return self.encode_batch(Tensor(x)).data

    def decode(self, embedding) -> np.ndarray:
        z = np.asarray(embedding.data if isinstance(embedding, Tensor) else embedding)
        if z.shape != (self.f, self.d):
            raise ShapeError(f"expected ({self.f}, {self.d}) embedding, got {z.shape}")
        with no_grad():
            return self.decode_batch(Tensor(z[None]))[0].data

    def reconstruction_loss(self, x: np.ndarray) -> Tensor:
        xt = Tensor(x)
        return T.l1_loss(self.decode_batch(self.encode_batch(xt)), xt)

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, p in self.named_parameters().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)


def train_autoencoder(
    series: Sequence[Sequence[float]],
    epochs: int = 500,
    batch: int = 32,
    seed: int = 0,
    config: AutoencoderConfig | None = None,
    lr: float = 1e-4,
    warmup_ratio: float = 0.33,
    weight_decay: float = 0.01,
) -> tuple[Autoencoder, list[float]]:
    """Minimise mean L1 reconstruction error; returns the model and per-epoch mean losses."""
    if len(series) == 0:
        raise ParameterError("need at least one series")
    config = config or AutoencoderConfig(seed=seed)
    model = Autoencoder(config)
    data = np.stack([canonicalize(s, config.l_max) for s in series]).astype(T.default_dtype())
    steps_per_epoch = -(-len(data) // batch)
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay, total_steps=epochs * steps_per_epoch, warmup_ratio=warmup_ratio)
    history = []
    for epoch in range(epochs):
        order = child_rng(seed, "ae-shuffle", epoch).permutation(len(data))
        total = 0.0
        for start in range(0, len(data), batch):
            xb = data[order[start : start + batch]]
            opt.zero_grad()
            try:
                loss = model.reconstruction_loss(xb)
            except NumericError as exc:
                raise NumericError(f"autoencoder loss became non-finite at epoch {epoch}") from exc
            loss.backward()
            opt.step()
            total += loss.item() * len(xb)
        history.append(total / len(data))
        if epoch % 50 == 0 or epoch == epochs - 1:
            log.info("ae epoch %d loss %.5f", epoch, history[-1])
    return model, history
