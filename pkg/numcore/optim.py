# optim.py
# AdamW with decoupled weight decay and the warmup + cosine learning-rate schedule

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from errors import ShapeError
from numcore.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class OptimState:
    """Moment buffers, step counter and base lr / decay for a list of parameters"""
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    weight_decay: float = 1e-4

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor], lr: float = 1e-4, weight_decay: float = 1e-4) -> "OptimState":
        return cls(m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params],
                   lr=lr, weight_decay=weight_decay)


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimState, lr: float,
               weight_decay: float = 1e-4, betas: Tuple[float, float] = (0.9, 0.999),
               eps: float = 1e-8) -> Tuple[Sequence[Tensor], OptimState]:
    """
    One AdamW update, in place:
        p <- p * (1 - lr * wd)
        p <- p - lr * m_hat / (sqrt(v_hat) + eps)
    """
    if lr <= 0:
        raise ValueError(f"adamw_step: learning rate must be positive, got {lr}")
    if not len(params) == len(grads) == len(state.m):
        raise ShapeError(f"adamw_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moment buffers")
    beta1, beta2 = betas
    state.step += 1
    bias1 = 1.0 - beta1 ** state.step
    bias2 = 1.0 - beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ShapeError(f"adamw_step: param {p.shape}, grad {g.shape}, moment {state.m[i].shape}")
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        p.data *= (1.0 - lr * weight_decay)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


class AdamW:
    """
    Named parameter groups ("backbone", "head"), each with its own base lr.
    step(scale) updates every group at base_lr * scale; params whose grad is
    None (frozen or unused this step) are skipped.
    """

    def __init__(self, groups: Mapping[str, Sequence[Tensor]], lrs: Mapping[str, float],
                 weight_decay: float = 1e-4, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.groups: Dict[str, List[Tensor]] = {name: list(params) for name, params in groups.items()}
        self.betas = betas
        self.eps = eps
        self.state: Dict[str, List[OptimState]] = {}
        for name, params in self.groups.items():
            # one state per parameter: step counts only the updates that parameter received
            self.state[name] = [OptimState.zeros_like([p], lr=lrs[name], weight_decay=weight_decay) for p in params]

    def step(self, scale: float) -> int:
        """Returns the number of updated tensors"""
        updated = 0
        for name, params in self.groups.items():
            for p, st in zip(params, self.state[name]):
                if p.grad is None or not p.requires_grad:
                    continue
                lr = st.lr * scale
                if lr <= 0:
                    continue
                adamw_step([p], [p.grad], st, lr, weight_decay=st.weight_decay, betas=self.betas, eps=self.eps)
                updated += 1
        return updated

    def zero_grad(self):
        for params in self.groups.values():
            for p in params:
                p.grad = None


# ====== Schedule ======

@dataclass
class ScheduleConfig:
    base_lr: float = 1.0
    warmup_epochs: int = 5
    max_epochs: int = 120

    def __post_init__(self):
        if self.warmup_epochs < 0 or self.max_epochs <= self.warmup_epochs:
            raise ValueError(f"schedule needs 0 <= warmup ({self.warmup_epochs}) < max ({self.max_epochs})")


def lr_at(epoch: int, cfg: ScheduleConfig) -> float:
    """Linear ramp 0 -> base over warmup, then base * (1 + cos(pi * t / T)) / 2"""
    if epoch < 0 or epoch > cfg.max_epochs:
        raise ValueError(f"lr_at: epoch {epoch} outside [0, {cfg.max_epochs}]")
    if epoch <= cfg.warmup_epochs and cfg.warmup_epochs > 0:
        return cfg.base_lr * epoch / cfg.warmup_epochs
    t = epoch - cfg.warmup_epochs
    span = cfg.max_epochs - cfg.warmup_epochs
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * t / span))
