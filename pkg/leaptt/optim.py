"""
First-order optimizers over flat parameter vectors.

SGD drives the inner task rollouts, Adam the SSL stage and the meta loop,
AdamW (decoupled weight decay) the fine-tuning stage. Every optimizer keeps
its state in plain numpy arrays so meta-state can be checkpointed.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from leaptt.errors import ShapeError


@dataclass
class AdamState:
    """First/second moment estimates and the number of updates applied."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int, dtype=np.float64) -> "AdamState":
        return cls(m=np.zeros(size, dtype=dtype), v=np.zeros(size, dtype=dtype), step=0)

    def copy(self) -> "AdamState":
        return AdamState(m=self.m.copy(), v=self.v.copy(), step=self.step)


def adam_update(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> Tuple[np.ndarray, AdamState]:
    """
    One bias-corrected Adam step; weight decay (if any) is decoupled as in AdamW.

    Returns:
        (new parameters, new state); inputs are left untouched
    """
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise ShapeError("adam_update", [params.shape, grad.shape, state.m.shape])

    beta1, beta2 = betas
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)

    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    if weight_decay:
        new_params = new_params - lr * weight_decay * params
    return new_params, AdamState(m=m, v=v, step=step)


class SGD:
    """Plain gradient descent: theta <- theta - lr * grad."""

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray, lr: Optional[float] = None) -> np.ndarray:
        return params - (self.lr if lr is None else lr) * grad


class Adam:
    """
    Stateful Adam over one flat vector.

    Args:
        size: Length of the parameter vector
        lr: Base learning rate; ``step`` accepts a scheduled override
        betas: Moment decay rates
        eps: Denominator stabilizer
        weight_decay: Decoupled weight decay (0 for Adam)
    """

    def __init__(
        self,
        size: int,
        lr: float,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        dtype=np.float64,
    ):
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamState.zeros(size, dtype=dtype)

    def step(self, params: np.ndarray, grad: np.ndarray, lr: Optional[float] = None) -> np.ndarray:
        new_params, self.state = adam_update(
            params,
            grad,
            self.state,
            self.lr if lr is None else lr,
            self.betas,
            self.eps,
            self.weight_decay,
        )
        return new_params


class AdamW(Adam):
    """Adam with decoupled weight decay (default 0.01)."""

    def __init__(
        self,
        size: int,
        lr: float,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        dtype=np.float64,
    ):
        super().__init__(size, lr, betas=betas, eps=eps, weight_decay=weight_decay, dtype=dtype)


def warmup_linear_decay(step: int, total_steps: int, warmup_fraction: float = 0.05) -> float:
    """
    Learning-rate multiplier: linear warm-up, then linear decay to 0.

    Args:
        step: Zero-based update index
        total_steps: Number of updates in the run
        warmup_fraction: Share of updates spent warming up

    Examples:
        >>> warmup_linear_decay(0, 100, 0.05)
        0.2
        >>> warmup_linear_decay(4, 100, 0.05)
        1.0
    """
    if total_steps <= 0:
        return 0.0
    warmup = max(1, int(round(warmup_fraction * total_steps)))
    if step < warmup:
        return (step + 1) / warmup
    remaining = total_steps - warmup
    if remaining <= 0:
        return 1.0
    return max(0.0, (total_steps - step) / remaining)
