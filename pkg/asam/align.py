# align.py
# Shared-space projection, diagnosis head and the three loss terms

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from errors import DataError, NonFiniteError, ShapeError
from numcore import Linear, Module, Parameter, Tensor, as_tensor
from numcore import functional as F
from numcore.nn import xavier_uniform

logger = logging.getLogger(__name__)

N_CLASSES = 2


class LossWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=0.8, ge=0)
    beta: float = Field(default=0.2, ge=0)


class AlignHead(Module):
    """
    W_z: (D, D_a), W_t: (D_t, D_a), MLP [u; t; cos] -> hidden (relu) -> 2 logits.
    With use_text=False the MLP reads u alone.
    """

    def __init__(self, visual_dim: int, text_dim: int, align_dim: int, hidden_dim: int,
                 rng: np.random.Generator, use_text: bool = True):
        super().__init__()
        self.use_text = use_text
        self.W_z = Parameter(xavier_uniform(rng, (visual_dim, align_dim), visual_dim, align_dim))
        self.W_t = Parameter(xavier_uniform(rng, (text_dim, align_dim), text_dim, align_dim))
        in_dim = 2 * align_dim + 1 if use_text else align_dim
        self.hidden = Linear(in_dim, hidden_dim, rng)
        self.out = Linear(hidden_dim, N_CLASSES, rng)

    def forward(self, z, t=None) -> Tensor:
        return classify(z, t, self)


def _check_norms(op: str, vectors: Tensor):
    norms = np.linalg.norm(vectors.data, axis=-1)
    if np.any(norms == 0):
        raise NonFiniteError(f"{op}: degenerate projection (zero norm at rows {np.flatnonzero(norms == 0).tolist()})")


def project(z, t, head: AlignHead):
    """u = Z W_z, t' = T_emb W_t"""
    z, t = as_tensor(z), as_tensor(t)
    if z.shape[-1] != head.W_z.shape[0] or t.shape[-1] != head.W_t.shape[0]:
        raise ShapeError(f"project: Z {z.shape} / T {t.shape} vs W_z {head.W_z.shape} / W_t {head.W_t.shape}")
    return F.matmul(z, head.W_z), F.matmul(t, head.W_t)


def classifier_input(z, t, head: AlignHead) -> Tensor:
    """[u; t'; cos(u, t')] per row, or u alone for a visual-only head"""
    if not head.use_text:
        return F.matmul(as_tensor(z), head.W_z)
    if t is None:
        raise ShapeError("classifier_input: the text embedding is required by this head")
    u, v = project(z, t, head)
    _check_norms("classify", u)
    _check_norms("classify", v)
    cos = F.reshape(F.cosine_similarity(u, v), (u.shape[0], 1))
    return F.concat([u, v, cos], axis=-1)


def classify(z, t, head: AlignHead) -> Tensor:
    """(B, D), (B, D_t) -> (B, 2) logits"""
    return head.out(F.relu(head.hidden(classifier_input(z, t, head))))


def align_loss(z, t, head: AlignHead) -> Tensor:
    """1 - mean_i cos(Z_i W_z, T_i W_t), in [0, 2]"""
    u, v = project(z, t, head)
    if u.shape[0] < 1:
        raise DataError("align_loss: empty batch")
    _check_norms("align_loss", u)
    _check_norms("align_loss", v)
    return 1.0 - F.mean(F.cosine_similarity(u, v))


def reg_loss(head: AlignHead) -> Tensor:
    """||W_z^T W_z - W_t^T W_t||_F^2"""
    gap = F.matmul(F.transpose(head.W_z), head.W_z) - F.matmul(F.transpose(head.W_t), head.W_t)
    return F.sum(gap * gap)


def cross_entropy(logits, labels) -> Tensor:
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: {labels.shape} labels for logits {logits.shape}")
    if not np.all(np.isin(labels, np.arange(logits.shape[-1]))):
        raise DataError(f"cross_entropy: labels must lie in 0..{logits.shape[-1] - 1}, got {np.unique(labels).tolist()}")
    picked = F.log_softmax(logits, axis=-1)[np.arange(labels.size), labels.astype(np.int64)]
    return -F.mean(picked)


@dataclass
class LossTerms:
    total: Tensor
    cls: Tensor
    align: Optional[Tensor]
    reg: Optional[Tensor]

    def as_floats(self) -> dict:
        return {
            "loss": self.total.item(),
            "cls": self.cls.item(),
            "align": self.align.item() if self.align is not None else 0.0,
            "reg": self.reg.item() if self.reg is not None else 0.0,
        }


def loss_terms(logits, labels, z, t, head: AlignHead, weights: LossWeights) -> LossTerms:
    """CE + alpha * align + beta * reg; a zero weight leaves its term out of the graph"""
    cls = cross_entropy(logits, labels)
    total, align, reg = cls, None, None
    if weights.alpha > 0:
        align = align_loss(z, t, head)
        total = total + weights.alpha * align
    if weights.beta > 0:
        reg = reg_loss(head)
        total = total + weights.beta * reg
    return LossTerms(total=total, cls=cls, align=align, reg=reg)


def total_loss(logits, labels, z, t, head: AlignHead, weights: LossWeights) -> Tensor:
    return loss_terms(logits, labels, z, t, head, weights).total
