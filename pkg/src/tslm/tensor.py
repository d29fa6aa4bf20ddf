"""Dense tensors with reverse-mode automatic differentiation.

Every op builds its output eagerly with numpy and, when any input requires a
gradient, records a closure that maps the output gradient back to the inputs.
``backward`` walks the graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, EmptyLossError, NumericError, ParameterError, ShapeError

_DTYPE = np.float32
_GRAD_ENABLED = True
_DROPOUT: tuple | None = None  # (rate, generator) while training


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def float64():
    """Run the enclosed block in 64-bit precision (gradient-check mode)."""
    global _DTYPE
    prev, _DTYPE = _DTYPE, np.float64
    try:
        yield
    finally:
        _DTYPE = prev


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def dropout_scope(rate: float, rng: np.random.Generator):
    """Enable :func:`dropout` for the enclosed training step."""
    global _DROPOUT
    prev, _DROPOUT = _DROPOUT, (rate, rng) if rate > 0 else None
    try:
        yield
    finally:
        _DROPOUT = prev


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {where}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None, _op="tensor"):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(_DTYPE)
        elif _op == "tensor" and arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        _check_finite(arr, _op)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    # -- operators ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def backward(self):
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DTYPE))


def _make(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, True, _parents=tuple(parents), _backward=backward_fn, _op=op)
    return Tensor(data, False, _op=op)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ----------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), bw, "div")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(a.data**exponent, (a,), bw, "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def dropout(a) -> Tensor:
    """Inverted dropout; identity outside :func:`dropout_scope`."""
    if _DROPOUT is None:
        return a
    rate, rng = _DROPOUT
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    keep = keep.astype(a.dtype)
    return _make(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# ----------------------------------------------------------------------
# reductions and shape
# ----------------------------------------------------------------------
def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), bw, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, bw, "concat")


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]``; gradients scatter-add into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"token id out of range [0, {weight.shape[0]})")

    def bw(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)

    return _make(weight.data[ids], (weight,), bw, "embedding")


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """out[b, s] = x[b, index[b, s]] for a (B, S, d) tensor."""
    index = np.asarray(index, dtype=np.int64)
    batch = np.arange(x.shape[0])[:, None]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (batch, index), g)
        return (full,)

    return _make(x.data[batch, index], (x,), bw, "gather_rows")


# ----------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


# ----------------------------------------------------------------------
# normalisation / probability
# ----------------------------------------------------------------------
def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    out = _softmax_np(x.data, axis)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError("log_softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def bw(g):
        dxhat = g * gamma.data
        dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "layer_norm")


# ----------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------
def cross_entropy(logits, targets, pad_id: int | None = 0) -> Tensor:
    """Mean next-token negative log-likelihood over non-pad positions."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    vocab = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"targets {targets.shape} do not match logits {logits.shape}")
    mask = np.ones(targets.shape, bool) if pad_id is None else targets != pad_id
    count = int(mask.sum())
    if count == 0:
        raise EmptyLossError("every target position is padding")
    live = targets[mask]
    if live.min() < 0 or live.max() >= vocab:
        raise IndexError(f"target id out of range [0, {vocab})")
    flat = logits.data.reshape(-1, vocab)
    tflat = np.where(mask, targets, 0).reshape(-1)
    mflat = mask.reshape(-1)
    z = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(flat.shape[0])
    loss = -(logp[rows, tflat] * mflat).sum() / count

    def bw(g):
        d = np.exp(logp)
        d[rows, tflat] -= 1.0
        d *= (mflat[:, None] * (g / count))
        return (d.reshape(logits.shape),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), bw, "cross_entropy")


def l1_loss(pred, target) -> Tensor:
    """Mean absolute error over all elements."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        s = np.sign(diff) * (g / n)
        return s, -s

    return _make(np.asarray(np.abs(diff).mean(), dtype=pred.dtype), (pred, target), bw, "l1_loss")


# ----------------------------------------------------------------------
# convolutions (channels-first; optional leading batch axis)
# ----------------------------------------------------------------------
def conv_out_length(length: int, k: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - k) // stride + 1


def conv_transpose_out_length(length: int, k: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return (length - 1) * stride - 2 * padding + k + output_padding


def conv1d(x, kernels, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation with zero padding.

    ``x`` is (c_in, L) or (B, c_in, L); ``kernels`` is (c_out, c_in, k).
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    c_out, c_in, k = kernels.shape
    if xd.shape[1] != c_in:
        raise ShapeError(f"conv1d expects {c_in} input channels, got {xd.shape[1]}")
    if k < 1 or stride < 1 or padding < 0:
        raise ParameterError("conv1d needs k >= 1, stride >= 1, padding >= 0")
    length = xd.shape[2]
    if length + 2 * padding < k:
        raise ShapeError("conv1d window larger than padded input")
    l_out = conv_out_length(length, k, stride, padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding)))
    idx = np.arange(k)[:, None] + stride * np.arange(l_out)[None, :]  # (k, l_out)
    cols = xp[:, :, idx]  # (B, c_in, k, l_out)
    out = np.einsum("bckl,ock->bol", cols, kernels.data, optimize=True)

    def bw(g):
        gd = g[None] if squeeze else g
        gw = np.einsum("bol,bckl->ock", gd, cols, optimize=True)
        gcols = np.einsum("bol,ock->bckl", gd, kernels.data, optimize=True)
        gxp = np.zeros_like(xp)
        np.add.at(gxp, (slice(None), slice(None), idx), gcols)
        gx = gxp[:, :, padding : padding + length]
        return (gx[0] if squeeze else gx), gw

    return _make(out[0] if squeeze else out, (x, kernels), bw, "conv1d")


def conv1d_transpose(x, kernels, stride: int = 1, padding: int = 0, output_padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv1d` for the same kernels, stride and padding.

    ``x`` is (c_in, L) or (B, c_in, L); ``kernels`` is (c_in, c_out, k), i.e.
    the weight of the forward convolution that maps c_out -> c_in channels.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if not 0 <= output_padding < max(stride, 1):
        raise ParameterError("output_padding must satisfy 0 <= output_padding < stride")
    if stride < 1 or padding < 0:
        raise ParameterError("conv1d_transpose needs stride >= 1, padding >= 0")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    c_in, c_out, k = kernels.shape
    if xd.shape[1] != c_in:
        raise ShapeError(f"conv1d_transpose expects {c_in} input channels, got {xd.shape[1]}")
    length = xd.shape[2]
    l_out = conv_transpose_out_length(length, k, stride, padding, output_padding)
    if l_out < 1:
        raise ShapeError("conv1d_transpose output would be empty")
    l_full = max((length - 1) * stride + k, padding + l_out)
    idx = np.arange(k)[:, None] + stride * np.arange(length)[None, :]  # (k, L)
    cols = np.einsum("bcl,cok->bokl", xd, kernels.data, optimize=True)
    full = np.zeros((xd.shape[0], c_out, l_full), dtype=cols.dtype)
    np.add.at(full, (slice(None), slice(None), idx), cols)
    out = full[:, :, padding : padding + l_out]

    def bw(g):
        gd = g[None] if squeeze else g
        gfull = np.zeros_like(full)
        gfull[:, :, padding : padding + l_out] = gd
        gcols = gfull[:, :, idx]  # (B, c_out, k, L)
        gx = np.einsum("bokl,cok->bcl", gcols, kernels.data, optimize=True)
        gw = np.einsum("bcl,bokl->cok", xd, gcols, optimize=True)
        return (gx[0] if squeeze else gx), gw

    return _make(out[0] if squeeze else out, (x, kernels), bw, "conv1d_transpose")


# ----------------------------------------------------------------------
# autodiff driver
# ----------------------------------------------------------------------
def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    Returns a map from ``id(leaf)`` to its gradient for convenience.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            leaves[id(node)] = node.grad
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return leaves


def grad_check(f: Callable[..., Tensor], *inputs, eps: float = 1e-6) -> float:
    """Max relative error between autodiff and central finite differences.

    ``inputs`` are arrays or Tensors; Tensors are perturbed in place so that a
    closure over model parameters can be checked with ``f`` ignoring its args.
    The error per coordinate is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    """
    restore = [(x, x.data.dtype) for x in inputs if isinstance(x, Tensor)]
    try:
        return _grad_check(f, inputs, eps)
    finally:
        for x, dt in restore:
            x.data = x.data.astype(dt)
            x.grad = None


def _grad_check(f, inputs, eps):
    with float64():
        tensors = []
        for x in inputs:
            if isinstance(x, Tensor):
                x.data = x.data.astype(np.float64)
                x.requires_grad = True
                x.grad = None
                tensors.append(x)
            else:
                tensors.append(Tensor(np.asarray(x, dtype=np.float64), requires_grad=True))
        loss = f(*tensors)
        if not np.isfinite(loss.data).all():
            raise NumericError("non-finite loss in grad_check")
        backward(loss)
        worst = 0.0
        for t in tensors:
            ad = np.zeros_like(t.data) if t.grad is None else t.grad
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                with no_grad():
                    up = float(f(*tensors).data)
                flat[i] = orig - eps
                with no_grad():
                    down = float(f(*tensors).data)
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NumericError("non-finite intermediate in grad_check")
                fd = (up - down) / (2 * eps)
                a = float(ad.reshape(-1)[i])
                worst = max(worst, abs(a - fd) / max(1.0, abs(a), abs(fd)))
        return worst


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.isfinite(p.data).all() for p in params)
