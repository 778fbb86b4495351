"""Adaptive-moment (Adam) updates with global-norm clipping."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, tensor_name: str):
        super().__init__(f"non-finite gradient for tensor {tensor_name!r}; update rejected")
        self.tensor_name = tensor_name


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float | None = 5.0):
        self.params = list(params)
        self.state = OptimizerState(lr, beta1, beta2, eps, clip_norm, 0,
                                    [np.zeros_like(p.value) for p in self.params],
                                    [np.zeros_like(p.value) for p in self.params])

    def step(self, grads: Mapping[Tensor, np.ndarray] | Sequence[np.ndarray]) -> float:
        if isinstance(grads, Mapping):
            grads = [grads[p] for p in self.params]
        return optimizer_update(self.state, self.params, grads)


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


def optimizer_update(state: OptimizerState, params: Sequence[Tensor],
                     grads: Sequence[np.ndarray]) -> float:
    """Apply one bias-corrected Adam step in place and return the pre-clip norm.

    Raises NonFiniteGradientError (leaving parameters and state untouched) when
    any gradient entry is NaN or infinite.
    """
    if len(grads) != len(params):
        raise ValueError(f"{len(grads)} gradients for {len(params)} parameters")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.value.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(p.name or f"#{i}")
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if state.clip_norm is not None:
        grads, norm = clip_global_norm(grads, state.clip_norm)
    else:
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))

    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step_count
    corr2 = 1.0 - b2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return norm
