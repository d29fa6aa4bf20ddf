"""Parameter containers and the layers shared by every model."""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from . import tensor as T
from .rng import child_rng
from .tensor import Tensor

NEG_INF = -1e9


class Module:
    """Minimal parameter container; attributes are registered in assignment order."""

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue  # non-owned references (e.g. a frozen autoencoder)
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[full] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{full}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        # a shared tensor registered twice is yielded once
        seen, out = set(), []
        for p in self.named_parameters().values():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def load_arrays(self, arrays: dict) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"missing tensors: {sorted(missing)}")
        unexpected = set(arrays) - set(params)
        if unexpected:
            raise KeyError(f"unexpected tensors: {sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.data.dtype).copy()


def uniform_param(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, seed: int, name: str, bias: bool = True):
        rng = child_rng(seed, name)
        self.weight = uniform_param(rng, (d_in, d_out), d_in)
        self.bias = zeros_param((d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = zeros_param((d,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


def split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return T.transpose(T.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None, probs_out: list | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d_h) + mask) v over the last two axes."""
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = scores + Tensor(mask.astype(scores.dtype))
    probs = T.softmax(scores, axis=-1)
    if probs_out is not None:
        probs_out.append(probs.data)
    return T.matmul(probs, v)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, seed: int, name: str):
        if d % heads:
            raise ValueError(f"d={d} not divisible by heads={heads}")
        self.heads = heads
        self.query = Linear(d, d, seed, f"{name}.query")
        self.key = Linear(d, d, seed, f"{name}.key")
        self.value = Linear(d, d, seed, f"{name}.value")
        self.out = Linear(d, d, seed, f"{name}.out")

    def __call__(self, x: Tensor, context: Tensor, mask=None, probs_out=None) -> Tensor:
        q = split_heads(self.query(x), self.heads)
        k = split_heads(self.key(context), self.heads)
        v = split_heads(self.value(context), self.heads)
        return self.out(merge_heads(attention(q, k, v, mask, probs_out)))


class FeedForward(Module):
    def __init__(self, d: int, seed: int, name: str, expansion: int = 2):
        self.up = Linear(d, expansion * d, seed, f"{name}.up")
        self.down = Linear(expansion * d, d, seed, f"{name}.down")

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(T.relu(self.up(x)))


class EncoderBlock(Module):
    """Pre-norm self-attention block."""

    def __init__(self, d: int, heads: int, seed: int, name: str):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, seed, f"{name}.attn")
        self.norm2 = LayerNorm(d)
        self.ff = FeedForward(d, seed, f"{name}.ff")

    def __call__(self, x: Tensor, mask=None, probs_out=None) -> Tensor:
        h = self.norm1(x)
        x = x + T.dropout(self.attn(h, h, mask, probs_out))
        return x + T.dropout(self.ff(self.norm2(x)))


class DecoderBlock(Module):
    """Pre-norm block: causal self-attention, cross-attention, feed-forward."""

    def __init__(self, d: int, heads: int, seed: int, name: str):
        self.norm1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads, seed, f"{name}.self_attn")
        self.norm2 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads, seed, f"{name}.cross_attn")
        self.norm3 = LayerNorm(d)
        self.ff = FeedForward(d, seed, f"{name}.ff")

    def __call__(self, y: Tensor, memory: Tensor, self_mask=None, cross_mask=None) -> Tensor:
        h = self.norm1(y)
        y = y + T.dropout(self.self_attn(h, h, self_mask))
        y = y + T.dropout(self.cross_attn(self.norm2(y), memory, cross_mask))
        return y + T.dropout(self.ff(self.norm3(y)))


def key_padding_mask(valid: np.ndarray) -> np.ndarray:
    """(B, S) bool of real positions -> additive (B, 1, 1, S) mask."""
    return np.where(valid, 0.0, NEG_INF)[:, None, None, :]


def causal_mask(n: int) -> np.ndarray:
    return np.triu(np.full((n, n), NEG_INF), k=1)[None, None]
