"""AdamW with decoupled weight decay and a warmup/linear-decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError
from .tensor import Tensor


def lr_at_step(step: int, base_lr: float, total_steps: int, warmup_ratio: float) -> float:
    """Linear ramp 0 -> base_lr over the warmup, then linear decay to 0."""
    if not 0.0 < warmup_ratio < 1.0:
        raise ParameterError("warmup_ratio must lie in (0, 1)")
    if step < 0:
        raise ParameterError("step must be non-negative")
    if step > total_steps or total_steps <= 0:
        return 0.0
    warmup = warmup_ratio * total_steps
    if step <= warmup:
        return base_lr * step / warmup
    return base_lr * (total_steps - step) / (total_steps - warmup)


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    base_lr: float = 1e-4
    total_steps: int = 1
    warmup_ratio: float = 0.33
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: list[Tensor], grads: list[np.ndarray | None], state: OptimizerState, lr: float | None = None) -> None:
    """In-place AdamW update; aborts without touching anything on a NaN gradient.

    ``lr`` defaults to the schedule value at the upcoming step.
    """
    for g in grads:
        if g is not None and not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient at step {state.t + 1}; step aborted")
    state.t += 1
    if lr is None:
        lr = lr_at_step(state.t, state.base_lr, state.total_steps, state.warmup_ratio)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    updated = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if p.shape != g.shape:
            raise ParameterError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        with np.errstate(over="ignore", invalid="ignore"):
            new = (p.data - lr * state.weight_decay * p.data - lr * update).astype(p.data.dtype)
        if not np.isfinite(new).all():
            raise NumericError(f"parameter update overflowed at step {state.t}; step aborted")
        updated.append(new)
    for p, new in zip(params, updated):
        p.data = new


class AdamW:
    """Stateful wrapper binding :func:`adamw_step` to a parameter list."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01, total_steps=1, warmup_ratio=0.33):
        self.params = list(params)
        self.state = OptimizerState(betas[0], betas[1], eps, weight_decay, lr, total_steps, warmup_ratio)

    def step(self) -> float:
        lr = lr_at_step(self.state.t + 1, self.state.base_lr, self.state.total_steps, self.state.warmup_ratio)
        adamw_step(self.params, [p.grad for p in self.params], self.state, lr)
        return lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
