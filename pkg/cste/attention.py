# attention.py
# Local refinement of the wavelet tokens, cross-scale attention and the pre-norm ViT stack

import logging
from typing import List, Optional

import numpy as np

from errors import ShapeError
from hwm.branch import LevelSlot, grid_to_tokens, tokens_to_grid
from numcore import BatchNorm2d, Conv2d, LayerNorm, Linear, Module, Tensor
from numcore import functional as F

logger = logging.getLogger(__name__)


# ====== Local refinement ======

class LocalRefine(Module):
    """AvgPool2(ReLU(BN(Conv3x3(Conv1x1(x)))))"""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.compress = Conv2d(dim, dim, 1, rng)
        self.smooth = Conv2d(dim, dim, 3, rng, padding=1)
        self.norm = BatchNorm2d(dim)

    def forward(self, tokens, slots: Optional[List[LevelSlot]]) -> Tensor:
        return local_refine(tokens, slots, self)


def local_refine(tokens, slots: Optional[List[LevelSlot]], block: LocalRefine) -> Tensor:
    """F_final (B, L, D) -> F_local (B, L_loc, D), computed on the coarsest level grid"""
    if not slots:
        raise ShapeError("local_refine: token provenance is missing")
    grid = tokens_to_grid(tokens, slots[-1])
    x = F.relu(block.norm(block.smooth(block.compress(grid))))
    return grid_to_tokens(F.avg_pool2d(x, 2))


# ====== Cross-scale attention ======

def cross_attention(q, f_local, w_k, w_v) -> Tensor:
    """Single head: softmax(Q' K^T / sqrt(D)) V with K = F_local W_k, V = F_local W_v"""
    if q.shape[-1] != w_k.shape[-1] or f_local.shape[-1] != w_k.shape[0] or w_k.shape != w_v.shape:
        raise ShapeError(f"cross_attention: Q' {q.shape}, F_local {f_local.shape}, "
                         f"W_k {w_k.shape}, W_v {w_v.shape} do not conform")
    k = F.matmul(f_local, w_k)
    v = F.matmul(f_local, w_v)
    scores = F.matmul(q, F.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(q.shape[-1]))
    return F.matmul(F.softmax(scores, axis=-1), v)


class CrossAttention(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.key = Linear(dim, dim, rng, bias=False)
        self.value = Linear(dim, dim, rng, bias=False)

    def forward(self, q, f_local) -> Tensor:
        return cross_attention(q, f_local, self.key.weight, self.value.weight)


# ====== ViT ======

class SelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"SelfAttention: width {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.out = Linear(dim, dim, rng)

    def forward(self, x) -> Tensor:
        b, n, d = x.shape
        dh = d // self.heads
        qkv = F.reshape(self.qkv(x), (b, n, 3, self.heads, dh))
        q, k, v = (F.transpose(qkv[:, :, i], (0, 2, 1, 3)) for i in range(3))
        scores = F.matmul(q, F.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
        mixed = F.matmul(F.softmax(scores, axis=-1), v)
        return self.out(F.reshape(F.transpose(mixed, (0, 2, 1, 3)), (b, n, d)))


class EncoderLayer(Module):
    """x + MSA(LN(x)), then + FFN(LN(x)) with a relu hidden layer"""

    def __init__(self, dim: int, heads: int, expansion: int, rng: np.random.Generator):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, expansion * dim, rng)
        self.fc2 = Linear(expansion * dim, dim, rng)

    def forward(self, x) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.relu(self.fc1(self.norm2(x))))


class VisionEncoder(Module):
    def __init__(self, dim: int, layers: int, heads: int, expansion: int, rng: np.random.Generator):
        super().__init__()
        self.layers = [EncoderLayer(dim, heads, expansion, rng) for _ in range(layers)]
        self.norm = LayerNorm(dim)

    def forward(self, tokens) -> Tensor:
        for layer in self.layers:
            tokens = layer(tokens)
        return self.norm(tokens)
