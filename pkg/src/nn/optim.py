"""Adam optimizer over autodiff parameters."""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from src.nn.tensor import Tensor
from src.utils.errors import ShapeError


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamState) -> AdamState:
    """Bias-corrected Adam update, applied in place to ``params``.

    A missing gradient counts as zero.

    Raises:
        ShapeError: If a gradient does not match its parameter
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


def clip_grad_norm(grads: Sequence[Optional[np.ndarray]], max_norm: float) -> List[Optional[np.ndarray]]:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads if g is not None)))
    if total <= max_norm or total == 0.0:
        return list(grads)
    scale = max_norm / total
    return [None if g is None else g * scale for g in grads]
